//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use tap3d_core::annotation::{static_baseline, SceneSpec};
use tap3d_core::evaluate::{evaluate_video, EvalOptions, RescaleKind, Scores};
use tap3d_core::filtering::{count_transitions, flicker_filter, static_track_detector, FilterConfig};
use tap3d_core::metrics::{aj3d, position_indicators_2d, PixelScale, Scorer, ThresholdFamily, PIXEL_THRESHOLDS};
use tap3d_core::npy::{NpyArray, NpyError};
use tap3d_core::record::{read_record, write_prediction, write_record, RecordError, TRACKS_FILE, VISIBILITY_FILE};
use tap3d_core::rescaling::build_tubelets;
use tap3d_core::trackset::{FloatWidth, GroundTruthRecord, PredictionRecord, Query, SourceTag, Tracks3, Visibility};
use tap3d_core::{CameraIntrinsics, FocalRule, Point3};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn families() -> [ThresholdFamily; 2] {
    [ThresholdFamily::pixel_default(), ThresholdFamily::metric_default()]
}

fn options(rescale: RescaleKind, thresholds: ThresholdFamily) -> EvalOptions {
    EvalOptions {
        rescale,
        thresholds,
        ..Default::default()
    }
}

fn scores(gt: &GroundTruthRecord, pred: &PredictionRecord, opts: &EvalOptions) -> Result<Scores, String> {
    evaluate_video(gt, pred, opts)
        .map_err(|e| e.to_string())?
        .scores
        .ok_or_else(|| format!("{} excluded", gt.video_id))
}

fn flat(s: &Scores) -> Vec<f64> {
    let mut v = vec![s.aj_3d, s.apd_3d, s.oa];
    v.extend(&s.aj_3d_per_threshold);
    v.extend(&s.apd_3d_per_threshold);
    v
}

fn max_diff(a: &Scores, b: &Scores) -> f64 {
    flat(a).iter().zip(flat(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Ground truth with uniform noise, a random global scale and a
/// few visibility flips.
fn noisy_prediction(gt: &GroundTruthRecord, rng: &mut ChaCha8Rng, sigma: f64) -> PredictionRecord {
    let scale = rng.gen_range(0.2..5.0);
    let mut pred = PredictionRecord::perfect(gt);
    for p in pred.tracks.points_mut() {
        *p = Point3::new(
            (p.x + rng.gen_range(-sigma..sigma)) * scale,
            (p.y + rng.gen_range(-sigma..sigma)) * scale,
            (p.z + rng.gen_range(-sigma..sigma)) * scale,
        );
    }
    for q in 0..gt.num_tracks() {
        for t in 0..gt.num_frames() {
            if rng.gen_bool(0.1) {
                let v = pred.visibility.get(q, t);
                pred.visibility.set(q, t, !v);
            }
        }
    }
    pred
}

/// A random record independent of the scene generator.
fn random_record(rng: &mut ChaCha8Rng, id: usize) -> GroundTruthRecord {
    let q_count = rng.gen_range(1..12);
    let t_count = rng.gen_range(2..20);
    let intrinsics = CameraIntrinsics::new(rng.gen_range(100.0..600.0), rng.gen_range(100.0..600.0), 128.0, 96.0).unwrap();
    let mut tracks = Vec::new();
    let mut vis = Vec::new();
    let mut queries = Vec::new();
    for _ in 0..q_count {
        let track: Vec<Point3> = (0..t_count)
            .map(|_| Point3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.5..10.0)))
            .collect();
        let mut flags: Vec<bool> = (0..t_count).map(|_| rng.gen_bool(0.7)).collect();
        let frame = rng.gen_range(0..t_count);
        flags[frame] = true;
        let px = intrinsics.project(&track[frame]).unwrap();
        queries.push(Query { x: px.x, y: px.y, frame });
        tracks.push(track);
        vis.push(flags);
    }
    GroundTruthRecord {
        video_id: format!("rand-{id}"),
        source: SourceTag::Synthetic,
        fps: 30.0,
        intrinsics,
        image_size: Some((256, 192)),
        tracks: Tracks3::from_tracks(tracks).unwrap(),
        visibility: Visibility::from_tracks(vis).unwrap(),
        queries,
        storage: FloatWidth::F64,
    }
}

fn scene(seed: u64, frames: usize, tracks: usize, moving: bool) -> GroundTruthRecord {
    SceneSpec::random(seed, frames, tracks, moving).generate().unwrap()
}

fn criterion_1() -> Outcome {
    let videos: Vec<GroundTruthRecord> = (0..20u64)
        .map(|i| scene(100 + i, 30 + (i as usize * 6) % 121, 64 + (i as usize * 37) % 193, i % 4 != 0))
        .collect();
    let start = Instant::now();
    let mut evaluations = 0;
    for gt in &videos {
        let pred = PredictionRecord::perfect(gt);
        for rescale in [RescaleKind::Median, RescaleKind::PerTrack, RescaleKind::Local] {
            for family in families() {
                let s = scores(gt, &pred, &options(rescale, family))?;
                for v in flat(&s) {
                    check((v - 1.0).abs() <= 1e-12, format!("{} {rescale:?}: value {v}", gt.video_id))?;
                }
                evaluations += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("{evaluations} evaluations all exactly 1.0 in {:.2}s", elapsed.as_secs_f64()))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..10u64 {
        let gt = scene(200 + i, 40, 96, true);
        let pred = noisy_prediction(&gt, &mut rng, 0.05);
        for family in families() {
            let opts = options(RescaleKind::Median, family);
            let base = scores(&gt, &pred, &opts)?;
            for s in [0.1, 1.0, 7.3] {
                let scaled = scores(&gt, &pred.scaled(s), &opts)?;
                worst = worst.max(max_diff(&base, &scaled));
            }
        }
    }
    check(worst <= 1e-9, format!("max deviation {worst:e}"))?;
    Ok(format!("10 prediction sets x 3 scales, max deviation {worst:e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..10u64 {
        let gt = scene(300 + i, 40, 96, true);
        let pred = noisy_prediction(&gt, &mut rng, 0.05);
        let mut rescaled = pred.clone();
        for q in 0..gt.num_tracks() {
            let s = rng.gen_range(0.05..20.0);
            rescaled.tracks.track_mut(q).iter_mut().for_each(|p| *p *= s);
        }
        for family in families() {
            let opts = options(RescaleKind::PerTrack, family);
            worst = worst.max(max_diff(&scores(&gt, &pred, &opts)?, &scores(&gt, &rescaled, &opts)?));
        }
    }
    check(worst <= 1e-9, format!("max deviation {worst:e}"))?;
    Ok(format!("10 prediction sets with per-track scales, max deviation {worst:e}"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut compared, mut mismatches, mut seed) = (0usize, 0usize, 400u64);
    while compared < 100_000 {
        let gt = scene(seed, 60, 256, true);
        seed += 1;
        if gt.intrinsics.fx != gt.intrinsics.fy {
            return Err("scene intrinsics are not square".into());
        }
        let mut pred = PredictionRecord::perfect(&gt);
        for q in 0..gt.num_tracks() {
            for p in pred.tracks.track_mut(q) {
                let sigma = 8.0 * p.z / gt.intrinsics.fx;
                p.x += rng.gen_range(-sigma..sigma);
                p.y += rng.gen_range(-sigma..sigma);
            }
        }
        let scorer = Scorer::new(gt.intrinsics, ThresholdFamily::pixel_default(), FocalRule::GeometricMean);
        let a3 = scorer.position_indicators(&gt, &pred, None);
        let a2 = position_indicators_2d(&gt.to_2d(), &pred.to_2d(&gt.intrinsics), &PIXEL_THRESHOLDS, PixelScale::Native);
        for (row3, row2) in a3.iter().zip(&a2) {
            mismatches += row3.iter().zip(row2).filter(|(a, b)| a != b).count();
        }
        compared += a3[0].len();
    }
    check(mismatches == 0, format!("{mismatches} mismatches"))?;
    Ok(format!("{compared} visible points x 5 thresholds, 0 mismatches"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0usize;
    for i in 0..1000 {
        let gt = random_record(&mut rng, i);
        let sigma = rng.gen_range(0.001..2.0);
        let pred = noisy_prediction(&gt, &mut rng, sigma);
        let rescale = [RescaleKind::Median, RescaleKind::PerTrack, RescaleKind::Local][i % 3];
        for family in families() {
            let s = scores(&gt, &pred, &options(rescale, family))?;
            let per = s.aj_3d_per_threshold.iter().zip(&s.apd_3d_per_threshold);
            violations += per.filter(|(aj, apd)| aj > apd).count();
            violations += (s.aj_3d > s.apd_3d) as usize;
            violations += s.apd_3d_per_threshold.windows(2).filter(|w| w[1] < w[0]).count();
            violations += s.aj_3d_per_threshold.windows(2).filter(|w| w[1] < w[0]).count();
        }
    }
    check(violations == 0, format!("{violations} violations"))?;
    Ok("1000 records x 2 families, 0 violations".into())
}

fn brute_tubelets(tracks: &Tracks3, tau: f64) -> Vec<BTreeSet<(usize, usize)>> {
    (0..tracks.num_tracks())
        .map(|i| {
            let mut set = BTreeSet::new();
            for j in 0..tracks.num_tracks() {
                for t in 0..tracks.num_frames() {
                    if (tracks.get(j, t) - tracks.get(i, t)).norm() < tau {
                        set.insert((j, t));
                    }
                }
            }
            set
        })
        .collect()
}

/// Tubelet APD/AJ written straight from the set definition.
fn brute_local_scores(gt: &GroundTruthRecord, pred: &PredictionRecord, family: &ThresholdFamily, tau: f64) -> (f64, f64) {
    let sets = brute_tubelets(&gt.tracks, tau);
    let f = (gt.intrinsics.fx * gt.intrinsics.fy).sqrt();
    let (mut aj_sum, mut apd_sum, mut n) = (0.0, 0.0, 0usize);
    for (i, set) in sets.iter().enumerate() {
        let tq = gt.queries[i].frame;
        let pn = pred.tracks.get(i, tq).coords.norm();
        let scale = (pn > 1e-9).then(|| gt.tracks.get(i, tq).coords.norm() / pn);
        let visible = set.iter().filter(|&&(j, t)| gt.visibility.get(j, t)).count();
        if visible == 0 {
            continue;
        }
        let (mut aj, mut apd) = (0.0, 0.0);
        for &delta in family.values() {
            let (mut within, mut tp, mut fp, mut missed) = (0usize, 0usize, 0usize, 0usize);
            for &(j, t) in set {
                let (v, vh) = (gt.visibility.get(j, t), pred.visibility.get(j, t));
                let p = gt.tracks.get(j, t);
                let radius = match family {
                    ThresholdFamily::PixelAdaptive(_) => p.z * delta / f,
                    ThresholdFamily::FixedMetric(_) => delta,
                };
                let alpha = scale.is_some_and(|s| (pred.tracks.get(j, t) * s - p).norm() < radius);
                within += (v && alpha) as usize;
                tp += (v && vh && alpha) as usize;
                fp += (!v && vh) as usize;
                missed += (v && vh && !alpha) as usize;
            }
            apd += within as f64 / visible as f64;
            aj += tp as f64 / (visible + fp + missed) as f64;
        }
        let k = family.len() as f64;
        aj_sum += aj / k;
        apd_sum += apd / k;
        n += 1;
    }
    (aj_sum / n as f64, apd_sum / n as f64)
}

/// Tracks bunched in a few blobs so tubelets hold many members.
fn clustered_record(rng: &mut ChaCha8Rng, id: usize) -> GroundTruthRecord {
    let mut gt = random_record(rng, id);
    let q_count = rng.gen_range(8..=64);
    let t_count = rng.gen_range(2..=50);
    let centers: Vec<Point3> = (0..3)
        .map(|_| Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(2.0..6.0)))
        .collect();
    let mut tracks = Vec::new();
    let mut vis = Vec::new();
    let mut queries = Vec::new();
    for _ in 0..q_count {
        let c = centers[rng.gen_range(0..3)];
        let track: Vec<Point3> = (0..t_count)
            .map(|t| {
                let drift = t as f64 * 0.002;
                Point3::new(
                    c.x + drift + rng.gen_range(-0.08..0.08),
                    c.y + rng.gen_range(-0.08..0.08),
                    c.z + rng.gen_range(-0.08..0.08),
                )
            })
            .collect();
        let mut flags: Vec<bool> = (0..t_count).map(|_| rng.gen_bool(0.75)).collect();
        let frame = rng.gen_range(0..t_count);
        flags[frame] = true;
        let px = gt.intrinsics.project(&track[frame]).unwrap();
        queries.push(Query { x: px.x, y: px.y, frame });
        tracks.push(track);
        vis.push(flags);
    }
    gt.tracks = Tracks3::from_tracks(tracks).unwrap();
    gt.visibility = Visibility::from_tracks(vis).unwrap();
    gt.queries = queries;
    gt
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut records, mut members, mut worst) = (0usize, 0usize, 0.0f64);
    for i in 0..40 {
        let gt = if i % 2 == 0 {
            clustered_record(&mut rng, i)
        } else {
            scene(600 + i as u64, 20 + i % 31, 16 + i % 49, true)
        };
        let pred = noisy_prediction(&gt, &mut rng, 0.02);
        for tau in [0.03, 0.10] {
            let grid = build_tubelets(&gt.tracks, tau).map_err(|e| e.to_string())?;
            let brute = brute_tubelets(&gt.tracks, tau);
            for (g, b) in grid.iter().zip(&brute) {
                let g: BTreeSet<(usize, usize)> = g.members.iter().copied().collect();
                check(&g == b, format!("record {i}, tau {tau}: tubelet {} differs", members))?;
                members += g.len();
            }
            for family in families() {
                let opts = EvalOptions {
                    tau: Some(tau),
                    ..options(RescaleKind::Local, family.clone())
                };
                let s = scores(&gt, &pred, &opts)?;
                let (aj, apd) = brute_local_scores(&gt, &pred, &family, tau);
                worst = worst.max((s.aj_3d - aj).abs()).max((s.apd_3d - apd).abs());
            }
        }
        records += 1;
    }
    check(worst <= 1e-12, format!("metric deviation {worst:e}"))?;
    Ok(format!("{records} records x 2 radii, {members} tubelet members identical, max deviation {worst:e}"))
}

fn criterion_7() -> Outcome {
    let opts = EvalOptions::default();
    let still = scene(700, 30, 128, false);
    let s = scores(&still, &static_baseline(&still).map_err(|e| e.to_string())?, &opts)?;
    check(s.aj_3d == 1.0 && s.apd_3d == 1.0 && s.oa == 1.0, format!("static scene scored {s:?}"))?;
    let mut worst_gap = f64::INFINITY;
    for i in 0..10u64 {
        let gt = scene(710 + i, 40, 128, true);
        let baseline = scores(&gt, &static_baseline(&gt).map_err(|e| e.to_string())?, &opts)?;
        let perfect = scores(&gt, &PredictionRecord::perfect(&gt), &opts)?;
        check(baseline.aj_3d < perfect.aj_3d, format!("{}: baseline {} vs perfect {}", gt.video_id, baseline.aj_3d, perfect.aj_3d))?;
        worst_gap = worst_gap.min(perfect.aj_3d - baseline.aj_3d);
    }
    Ok(format!("static scene 1.0; 10 moving scenes below perfect (smallest gap {worst_gap:.3})"))
}

fn criterion_8() -> Outcome {
    let intrinsics = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
    let p = Point3::new(0.0, 0.0, 2.0);
    let gt = GroundTruthRecord {
        video_id: "hand".into(),
        source: SourceTag::Synthetic,
        fps: 30.0,
        intrinsics,
        image_size: None,
        tracks: Tracks3::from_tracks(vec![vec![p; 3]]).unwrap(),
        visibility: Visibility::from_tracks(vec![vec![true, true, false]]).unwrap(),
        queries: vec![Query { x: 320.0, y: 240.0, frame: 0 }],
        storage: FloatWidth::F64,
    };
    let far = Point3::new(5.0, 5.0, 9.0);
    let pred = PredictionRecord::new(
        Tracks3::from_tracks(vec![vec![p, far, far]]).unwrap(),
        Visibility::from_tracks(vec![vec![true, false, true]]).unwrap(),
    )
    .unwrap();
    // enumeration: TP = v·v̂·α = 1 (t0); Σv = 2; Σ(1−v)v̂ = 1 (t2); Σ v·v̂·(1−α) = 0
    let oracle = 1.0 / (2.0 + 1.0 + 0.0);
    let s = aj3d(&gt, &pred, &ThresholdFamily::pixel_default(), FocalRule::GeometricMean).map_err(|e| e.to_string())?;
    for v in &s.per_threshold {
        check(*v == oracle, format!("AJ {v} != 1/3"))?;
    }
    check(s.mean == oracle, format!("mean {}", s.mean))?;
    Ok("AJ = 1/3 exactly at every threshold".into())
}

fn criterion_9() -> Outcome {
    let cfg = FilterConfig::default();
    let with = |n: usize| -> Vec<bool> {
        let mut state = true;
        (0..100)
            .map(|t| {
                if t > 0 && t <= n {
                    state = !state;
                }
                state
            })
            .collect()
    };
    let (ten, eleven) = (with(10), with(11));
    check(count_transitions(&ten) == 10, format!("built {} transitions", count_transitions(&ten)))?;
    check(count_transitions(&eleven) == 11, format!("built {} transitions", count_transitions(&eleven)))?;
    let keep = flicker_filter(&Visibility::from_tracks(vec![ten, eleven]).unwrap(), &cfg);
    check(keep == vec![true, false], format!("keep flags {keep:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut static_count = 0;
    for _ in 0..100 {
        let t = rng.gen_range(2..300);
        let spread = rng.gen_range(0.002..0.015);
        let base = Point3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(1.0..20.0));
        let track: Vec<Point3> = (0..t)
            .map(|_| base + spread * Point3::new(rng.gen(), rng.gen(), rng.gen()).coords)
            .collect();
        let mut max_d: f64 = 0.0;
        for a in &track {
            for b in &track {
                max_d = max_d.max((a - b).norm());
            }
        }
        let oracle = max_d < cfg.static_epsilon;
        check(static_track_detector(&track, cfg.static_epsilon) == oracle, format!("disagree at max pairwise {max_d}"))?;
        static_count += oracle as usize;
    }
    Ok(format!("10 kept / 11 dropped; static detector matches oracle on 100 tracks ({static_count} static)"))
}

fn criterion_10(tmp: &Path) -> Outcome {
    let dir_bytes = |d: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let mut files = 0;
    for (i, width) in [FloatWidth::F64, FloatWidth::F32].into_iter().enumerate() {
        let mut gt = scene(1000 + i as u64, 25, 40, true);
        gt.storage = width;
        let (a, b) = (tmp.join(format!("rt{i}a")), tmp.join(format!("rt{i}b")));
        write_record(&gt, &a).map_err(|e| e.to_string())?;
        let back = read_record(&a).map_err(|e| e.to_string())?;
        write_record(&back, &b).map_err(|e| e.to_string())?;
        let (ba, bb) = (dir_bytes(&a), dir_bytes(&b));
        check(ba == bb, format!("{width:?} round trip differs"))?;
        check(read_record(&b).map_err(|e| e.to_string())? == back, "second read differs")?;
        files += ba.len();
    }

    let canonical = NpyArray::from_f64(vec![2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, f64::from_bits(0x7ff8_0000_0000_0abc)]).unwrap();
    let bytes = canonical.to_bytes();
    check(NpyArray::from_bytes(&bytes).unwrap().to_bytes() == bytes, "npy round trip")?;
    let patched = |from: &[u8], to: &[u8]| -> Vec<u8> {
        let mut b = bytes.clone();
        let pos = b.windows(from.len()).position(|w| w == from).unwrap();
        b[pos..pos + from.len()].copy_from_slice(to);
        b
    };
    let mut bad_magic = bytes.clone();
    bad_magic[0] = 0x92;
    let mut version = bytes.clone();
    version[6] = 4;
    let cases: Vec<(&str, Vec<u8>, fn(&NpyError) -> bool)> = vec![
        ("bad magic", bad_magic, |e| matches!(e, NpyError::BadMagic)),
        ("version 4.0", version, |e| matches!(e, NpyError::UnsupportedVersion(4, 0))),
        ("big-endian", patched(b"<f8", b">f8"), |e| matches!(e, NpyError::UnsupportedDtype(_))),
        ("complex dtype", patched(b"<f8", b"<c8"), |e| matches!(e, NpyError::UnsupportedDtype(_))),
        ("fortran order", patched(b"False", b"True,"), |e| matches!(e, NpyError::FortranOrder)),
        ("no shape key", patched(b"'shape'", b"'shope'"), |e| matches!(e, NpyError::MalformedHeader(_))),
        ("truncated", bytes[..bytes.len() - 3].to_vec(), |e| matches!(e, NpyError::Truncated { .. })),
    ];
    for (name, fixture, expected) in &cases {
        match NpyArray::from_bytes(fixture) {
            Err(e) if expected(&e) => {}
            other => return Err(format!("{name}: got {other:?}")),
        }
    }

    let gt = scene(1010, 12, 10, true);
    let dir = tmp.join("transposed");
    write_record(&gt, &dir).map_err(|e| e.to_string())?;
    NpyArray::from_bool(vec![12, 10], &vec![true; 120]).unwrap().write_file(dir.join(VISIBILITY_FILE)).unwrap();
    match read_record(&dir) {
        Err(RecordError::ShapeMismatch { field: "visibility", .. }) => {}
        other => return Err(format!("transposed visibility: got {other:?}")),
    }
    let mut corrupt = fs::read(dir.join(TRACKS_FILE)).unwrap();
    corrupt[3] = b'P';
    fs::write(dir.join(TRACKS_FILE), corrupt).unwrap();
    match read_record(&dir) {
        Err(RecordError::Array { field: "tracks_xyz", error: NpyError::BadMagic }) => {}
        other => return Err(format!("corrupted record: got {other:?}")),
    }
    Ok(format!("{files} record files byte-identical; {} malformed fixtures rejected as designed", cases.len() + 2))
}

fn tap3d(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tap3d"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("tap3d {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out)
}

fn criterion_11(tmp: &Path) -> Outcome {
    let gt_root = tmp.join("minival/gt");
    let pred_root = tmp.join("minival/pred");
    let sizes: Vec<(usize, usize)> = (0..150)
        .map(|i| ([128, 256, 512, 1024][i % 4], [60, 120, 200, 300][(i / 4) % 4]))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise: Vec<u64> = (0..150).map(|_| rng.gen()).collect();
    let (mut points, started) = (0usize, Instant::now());
    sizes
        .par_iter()
        .enumerate()
        .map(|(i, &(q, t))| -> Result<usize, String> {
            let mut gt = scene(5000 + i as u64, t, q, i % 5 != 0);
            gt.storage = FloatWidth::F32;
            let id = gt.video_id.clone();
            write_record(&gt, gt_root.join(&id)).map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(noise[i]);
            let pred = noisy_prediction(&gt, &mut rng, 0.03);
            write_prediction(&pred, pred_root.join(&id), FloatWidth::F32).map_err(|e| e.to_string())?;
            Ok(q * t)
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .for_each(|n| points += n);
    let generated = started.elapsed();

    let (gt_arg, pred_arg) = (gt_root.to_str().unwrap(), pred_root.to_str().unwrap());
    let run = |jobs: &str, out: &Path| -> Result<Duration, String> {
        let start = Instant::now();
        tap3d(&["evaluate", "--gt", gt_arg, "--pred", pred_arg, "--rescale", "median", "--jobs", jobs, "--out", out.to_str().unwrap()])?;
        Ok(start.elapsed())
    };
    let (r8, r1) = (tmp.join("report8.json"), tmp.join("report1.json"));
    let t8 = run("8", &r8)?;
    let t1 = run("1", &r1)?;
    let (b8, b1) = (fs::read(&r8).unwrap(), fs::read(&r1).unwrap());
    check(b8 == b1, "reports for --jobs 8 and --jobs 1 differ")?;
    let report: serde_json::Value = serde_json::from_slice(&b8).map_err(|e| e.to_string())?;
    let scored = report["per_video"].as_object().map_or(0, |m| m.len());
    check(scored == 150, format!("{scored} videos in report"))?;
    check(t8 < Duration::from_secs(120), format!("--jobs 8 took {t8:?}"))?;
    Ok(format!(
        "150 videos, {points} points: reports byte-identical; --jobs 8 {:.1}s, --jobs 1 {:.1}s (generation {:.1}s)",
        t8.as_secs_f64(),
        t1.as_secs_f64(),
        generated.as_secs_f64()
    ))
}

fn cli_contract(tmp: &Path) -> Result<(), String> {
    let gt = tmp.join("cli/gt");
    tap3d(&["synth", "--out", gt.to_str().unwrap(), "--count", "3", "--seed", "77", "--frames", "20", "--tracks", "40"])?;
    let out = tap3d(&["evaluate", "--gt", gt.to_str().unwrap(), "--pred", gt.to_str().unwrap(), "--rescale", "median"])?;
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    check(report["overall"]["aj_3d"] == 1.0, format!("overall {}", report["overall"]))?;
    check(report["schema"] == "tap3d-report/1", "schema tag")?;
    let bad = Command::new(env!("CARGO_BIN_EXE_tap3d"))
        .args(["evaluate", "--no-such-flag"])
        .output()
        .map_err(|e| e.to_string())?;
    check(bad.status.code() == Some(2), format!("unknown flag exit {:?}", bad.status.code()))?;
    check(String::from_utf8_lossy(&bad.stderr).contains("Usage"), "usage text missing")
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("perfect-prediction identity", Box::new(criterion_1)),
        ("global scale invariance", Box::new(criterion_2)),
        ("per-trajectory invariance", Box::new(criterion_3)),
        ("2D/3D indicator equivalence", Box::new(criterion_4)),
        ("AJ <= APD and threshold monotonicity", Box::new(criterion_5)),
        ("tubelet oracle equivalence", Box::new(criterion_6)),
        ("static baseline ordering", Box::new(criterion_7)),
        ("Jaccard hand case", Box::new(criterion_8)),
        ("filter boundaries", Box::new(criterion_9)),
        ("serialization", Box::new(|| criterion_10(tmp.path()))),
        (
            "determinism and throughput",
            Box::new(|| {
                cli_contract(tmp.path())?;
                criterion_11(tmp.path())
            }),
        ),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
