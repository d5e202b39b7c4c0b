//! Per-video evaluation, cross-video aggregation and the JSON report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geometry::FocalRule;
use crate::metrics::{
    count_2d, occlusion_accuracy, whole_samples, JaccardCounts, MetricError, OcclusionCounts, PixelScale, Scorer,
    ThresholdFamily, ThresholdScores, PIXEL_THRESHOLDS,
};
use crate::rescaling::{apply_rescale, default_tau, RescaleError, RescaleMode, Rescaled};
use crate::trackset::{GroundTruthRecord, PredictionRecord, SourceTag, TrackError};

pub const REPORT_SCHEMA: &str = "tap3d-report/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Incompatible(#[from] TrackError),
    #[error(transparent)]
    Rescale(#[from] RescaleError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("failed to start worker pool: {0}")]
    Pool(String),
}

/// Scale alignment requested on the command line. The tubelet radius is
/// resolved per video from [`EvalOptions::tau`] or the source default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleKind {
    #[default]
    Median,
    PerTrack,
    Local,
}

/// How videos combine within a source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Score each video, then average videos with equal weight.
    #[default]
    Video,
    /// Sum counts over every point of the source, then score once.
    Points,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelScaleMode {
    /// 256×256-equivalent raster when the image size is known.
    #[default]
    Raster,
    Native,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub rescale: RescaleKind,
    pub tau: Option<f64>,
    pub thresholds: ThresholdFamily,
    pub focal: FocalRule,
    pub pooling: Pooling,
    pub visible_only_median: bool,
    pub pixel_scale: PixelScaleMode,
    pub two_d: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            rescale: RescaleKind::Median,
            tau: None,
            thresholds: ThresholdFamily::pixel_default(),
            focal: FocalRule::GeometricMean,
            pooling: Pooling::Video,
            visible_only_median: false,
            pixel_scale: PixelScaleMode::Raster,
            two_d: true,
        }
    }
}

impl EvalOptions {
    pub fn mode_for(&self, source: SourceTag) -> RescaleMode {
        match self.rescale {
            RescaleKind::Median => RescaleMode::GlobalMedian,
            RescaleKind::PerTrack => RescaleMode::PerTrajectory,
            RescaleKind::Local => RescaleMode::LocalNeighborhood {
                tau: self.tau.unwrap_or_else(|| default_tau(source)),
            },
        }
    }
}

/// Headline and per-threshold scores for a video or an aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub aj_3d: f64,
    pub apd_3d: f64,
    pub oa: f64,
    pub aj_3d_per_threshold: Vec<f64>,
    pub apd_3d_per_threshold: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aj_2d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub apd_2d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aj_2d_per_threshold: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub apd_2d_per_threshold: Option<Vec<f64>>,
}

impl Scores {
    fn new(aj: ThresholdScores, apd: ThresholdScores, oa: f64, two_d: Option<(ThresholdScores, ThresholdScores)>) -> Self {
        let (aj_2d, apd_2d) = two_d.unzip();
        Self {
            aj_3d: aj.mean,
            apd_3d: apd.mean,
            oa,
            aj_3d_per_threshold: aj.per_threshold,
            apd_3d_per_threshold: apd.per_threshold,
            aj_2d: aj_2d.as_ref().map(|s| s.mean),
            apd_2d: apd_2d.as_ref().map(|s| s.mean),
            aj_2d_per_threshold: aj_2d.map(|s| s.per_threshold),
            apd_2d_per_threshold: apd_2d.map(|s| s.per_threshold),
        }
    }

    /// Element-wise unweighted mean. 2D fields survive only when every input
    /// has them.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Scores>) -> Option<Scores> {
        let items: Vec<&Scores> = items.into_iter().collect();
        let n = items.len();
        if n == 0 {
            return None;
        }
        let avg = |f: &dyn Fn(&Scores) -> f64| items.iter().map(|s| f(s)).sum::<f64>() / n as f64;
        let avg_vec = |f: &dyn Fn(&Scores) -> &[f64]| {
            let len = f(items[0]).len();
            (0..len)
                .map(|k| items.iter().map(|s| f(s)[k]).sum::<f64>() / n as f64)
                .collect::<Vec<_>>()
        };
        let all_2d = items.iter().all(|s| s.aj_2d.is_some());
        Some(Scores {
            aj_3d: avg(&|s| s.aj_3d),
            apd_3d: avg(&|s| s.apd_3d),
            oa: avg(&|s| s.oa),
            aj_3d_per_threshold: avg_vec(&|s| &s.aj_3d_per_threshold),
            apd_3d_per_threshold: avg_vec(&|s| &s.apd_3d_per_threshold),
            aj_2d: all_2d.then(|| avg(&|s| s.aj_2d.unwrap())),
            apd_2d: all_2d.then(|| avg(&|s| s.apd_2d.unwrap())),
            aj_2d_per_threshold: all_2d.then(|| avg_vec(&|s| s.aj_2d_per_threshold.as_deref().unwrap())),
            apd_2d_per_threshold: all_2d.then(|| avg_vec(&|s| s.apd_2d_per_threshold.as_deref().unwrap())),
        })
    }
}

/// Counts summed over a video, used by point pooling.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PooledCounts {
    pub counts_3d: JaccardCounts,
    pub occlusion: OcclusionCounts,
    pub counts_2d: Option<JaccardCounts>,
}

impl PooledCounts {
    fn merge(&mut self, other: &PooledCounts) {
        if self.counts_3d.within.is_empty() {
            *self = other.clone();
            return;
        }
        self.counts_3d.merge(&other.counts_3d);
        self.occlusion.merge(&other.occlusion);
        self.counts_2d = match (self.counts_2d.take(), &other.counts_2d) {
            (Some(mut a), Some(b)) => {
                a.merge(b);
                Some(a)
            }
            _ => None,
        };
    }

    fn scores(&self) -> Option<Scores> {
        let two_d = self
            .counts_2d
            .as_ref()
            .and_then(|c| Some((c.aj().ok()?, c.apd().ok()?)));
        Some(Scores::new(
            self.counts_3d.aj().ok()?,
            self.counts_3d.apd().ok()?,
            self.occlusion.accuracy()?,
            two_d,
        ))
    }
}

/// A note attached to the report: exclusions, fallbacks, degenerate tracks.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Diagnostic {
    pub video_id: String,
    pub kind: String,
    pub detail: String,
}

impl Diagnostic {
    pub fn new(video_id: &str, kind: &str, detail: impl Into<String>) -> Self {
        Self {
            video_id: video_id.to_string(),
            kind: kind.to_string(),
            detail: detail.into(),
        }
    }
}

/// Outcome for one video. `scores` is `None` when the video was excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEval {
    pub video_id: String,
    pub source: SourceTag,
    pub num_tracks: usize,
    pub num_frames: usize,
    pub scores: Option<Scores>,
    pub pooled: PooledCounts,
    pub diagnostics: Vec<Diagnostic>,
}

fn scores_2d(gt: &GroundTruthRecord, pred: &PredictionRecord, opts: &EvalOptions, notes: &mut Vec<Diagnostic>) -> Option<JaccardCounts> {
    if !opts.two_d {
        return None;
    }
    let scale = match (opts.pixel_scale, gt.image_size) {
        (PixelScaleMode::Raster, Some((width, height))) => PixelScale::Raster { width, height },
        (PixelScaleMode::Raster, None) => {
            notes.push(Diagnostic::new(&gt.video_id, "native_pixels", "image size unknown; 2D errors in native pixels"));
            PixelScale::Native
        }
        (PixelScaleMode::Native, _) => PixelScale::Native,
    };
    let projected = pred.to_2d(&gt.intrinsics);
    count_2d(&gt.to_2d(), &projected, &PIXEL_THRESHOLDS, scale).ok()
}

/// Rescales and scores one video.
pub fn evaluate_video(gt: &GroundTruthRecord, pred: &PredictionRecord, opts: &EvalOptions) -> Result<VideoEval, EvalError> {
    pred.check_compatible(gt)?;
    let id = gt.video_id.as_str();
    let mut diagnostics = Vec::new();
    let mut eval = VideoEval {
        video_id: gt.video_id.clone(),
        source: gt.source,
        num_tracks: gt.num_tracks(),
        num_frames: gt.num_frames(),
        scores: None,
        pooled: PooledCounts::default(),
        diagnostics: Vec::new(),
    };

    let mode = opts.mode_for(gt.source);
    let rescaled = match apply_rescale(gt, pred, mode, opts.visible_only_median) {
        Ok(r) => r,
        Err(RescaleError::AllDegenerate) => {
            eval.diagnostics
                .push(Diagnostic::new(id, "excluded", "every predicted point has a degenerate norm"));
            return Ok(eval);
        }
        Err(e) => return Err(e.into()),
    };

    let scorer = Scorer::new(gt.intrinsics, opts.thresholds.clone(), opts.focal);
    let (aj, apd, counts_3d) = match &rescaled {
        Rescaled::Whole {
            prediction, degenerate, ..
        } => {
            let bad = degenerate.iter().filter(|&&d| d).count();
            if bad > 0 {
                diagnostics.push(Diagnostic::new(id, "degenerate_tracks", format!("{bad} track(s) without a usable scale")));
            }
            let counts = scorer.count(whole_samples(gt, prediction, Some(degenerate)));
            match (counts.aj(), counts.apd()) {
                (Ok(aj), Ok(apd)) => (aj, apd, counts),
                _ => {
                    diagnostics.push(Diagnostic::new(id, "excluded", "no visible ground-truth points"));
                    eval.diagnostics = diagnostics;
                    return Ok(eval);
                }
            }
        }
        Rescaled::Tubelets(units) => {
            let mut total = JaccardCounts::new(opts.thresholds.len());
            let mut per_unit_aj = Vec::with_capacity(units.len());
            let mut per_unit_apd = Vec::with_capacity(units.len());
            let mut empty = 0usize;
            let mut bad = 0usize;
            for unit in units {
                bad += unit.scale.is_none() as usize;
                let counts = scorer.count(unit.samples(gt, pred));
                total.merge(&counts);
                match (counts.aj(), counts.apd()) {
                    (Ok(aj), Ok(apd)) => {
                        per_unit_aj.push(aj);
                        per_unit_apd.push(apd);
                    }
                    _ => empty += 1,
                }
            }
            if bad > 0 {
                diagnostics.push(Diagnostic::new(id, "degenerate_tracks", format!("{bad} anchor(s) without a usable scale")));
            }
            if empty > 0 {
                diagnostics.push(Diagnostic::new(id, "empty_tubelets", format!("{empty} tubelet(s) without visible points")));
            }
            match (ThresholdScores::average(&per_unit_aj), ThresholdScores::average(&per_unit_apd)) {
                (Some(aj), Some(apd)) => (aj, apd, total),
                _ => {
                    diagnostics.push(Diagnostic::new(id, "excluded", "no visible ground-truth points"));
                    eval.diagnostics = diagnostics;
                    return Ok(eval);
                }
            }
        }
    };

    let oa = occlusion_accuracy(&gt.visibility, &pred.visibility);
    let counts_2d = scores_2d(gt, pred, opts, &mut diagnostics);
    let two_d = counts_2d.as_ref().and_then(|c| Some((c.aj().ok()?, c.apd().ok()?)));
    eval.scores = Some(Scores::new(aj, apd, oa, two_d));
    eval.pooled = PooledCounts {
        counts_3d,
        occlusion: OcclusionCounts::from_visibility(&gt.visibility, &pred.visibility),
        counts_2d,
    };
    eval.diagnostics = diagnostics;
    Ok(eval)
}

/// Runs `job` over `items` on `jobs` worker threads; results keep input order.
pub fn run_parallel<T, R, E, F>(items: &[T], jobs: usize, job: F) -> Result<Vec<Result<R, E>>, EvalError>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    Ok(pool.install(|| items.par_iter().map(&job).collect()))
}

/// Aggregated scores and the machine-readable report.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub options: EvalOptions,
    pub videos: Vec<VideoEval>,
    pub per_source: BTreeMap<SourceTag, Scores>,
    pub overall: Option<Scores>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Report {
    /// Combines per-video results. Within a source, videos are averaged with
    /// equal weight (or their counts pooled); sources are then averaged with
    /// equal weight. Videos are processed in the given order.
    pub fn aggregate(options: EvalOptions, videos: Vec<VideoEval>, mut diagnostics: Vec<Diagnostic>) -> Report {
        let mut by_source: BTreeMap<SourceTag, Vec<&VideoEval>> = BTreeMap::new();
        for v in &videos {
            diagnostics.extend(v.diagnostics.iter().cloned());
            if v.scores.is_some() {
                by_source.entry(v.source).or_default().push(v);
            }
        }
        let per_source: BTreeMap<SourceTag, Scores> = by_source
            .into_iter()
            .filter_map(|(source, vids)| {
                let scores = match options.pooling {
                    Pooling::Video => Scores::mean(vids.iter().filter_map(|v| v.scores.as_ref())),
                    Pooling::Points => {
                        let mut pooled = PooledCounts::default();
                        vids.iter().for_each(|v| pooled.merge(&v.pooled));
                        pooled.scores()
                    }
                };
                scores.map(|s| (source, s))
            })
            .collect();
        let overall = Scores::mean(per_source.values());
        diagnostics.sort();
        Report {
            options,
            videos,
            per_source,
            overall,
            diagnostics,
        }
    }

    pub fn scored_videos(&self) -> usize {
        self.videos.iter().filter(|v| v.scores.is_some()).count()
    }

    fn config_json(&self) -> Value {
        let o = &self.options;
        let tau = match o.rescale {
            RescaleKind::Local => match o.tau {
                Some(t) => json!(t),
                None => Value::Object(
                    self.videos
                        .iter()
                        .map(|v| (v.source.to_string(), json!(default_tau(v.source))))
                        .collect(),
                ),
            },
            _ => Value::Null,
        };
        json!({
            "rescale": o.rescale,
            "tau": tau,
            "thresholds": o.thresholds,
            "focal": o.focal,
            "pooling": o.pooling,
            "visible_only_median": o.visible_only_median,
            "pixel_scale": o.pixel_scale,
            "pixel_thresholds_2d": if o.two_d { json!(PIXEL_THRESHOLDS) } else { Value::Null },
        })
    }

    /// The report as JSON with sorted keys.
    pub fn to_json(&self) -> Value {
        let per_video: serde_json::Map<String, Value> = self
            .videos
            .iter()
            .map(|v| {
                let mut entry = match &v.scores {
                    Some(s) => serde_json::to_value(s).expect("scores serialize"),
                    None => json!({ "excluded": true }),
                };
                let obj = entry.as_object_mut().expect("object");
                obj.insert("source".into(), json!(v.source));
                obj.insert("num_tracks".into(), json!(v.num_tracks));
                obj.insert("num_frames".into(), json!(v.num_frames));
                (v.video_id.clone(), entry)
            })
            .collect();
        let per_source: serde_json::Map<String, Value> = self
            .per_source
            .iter()
            .map(|(source, s)| {
                let mut entry = serde_json::to_value(s).expect("scores serialize");
                let n = self.videos.iter().filter(|v| v.source == *source && v.scores.is_some()).count();
                entry.as_object_mut().expect("object").insert("num_videos".into(), json!(n));
                (source.to_string(), entry)
            })
            .collect();
        json!({
            "schema": REPORT_SCHEMA,
            "config": self.config_json(),
            "overall": self.overall,
            "per_source": per_source,
            "per_video": per_video,
            "diagnostics": self.diagnostics,
        })
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("report serializes");
        s.push('\n');
        s
    }
}
