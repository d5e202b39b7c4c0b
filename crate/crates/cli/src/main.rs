use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{debug, info, warn};
use serde_json::{json, Value};

use tap3d_core::annotation::{static_baseline, synth_scene, SceneSpec};
use tap3d_core::evaluate::{
    evaluate_video, run_parallel, Diagnostic, EvalOptions, PixelScaleMode, Pooling, Report, RescaleKind,
};
use tap3d_core::filtering::{apply_filters, default_speed_edges, record_stats, FilterConfig, Histogram};
use tap3d_core::metrics::ThresholdFamily;
use tap3d_core::record::{
    list_record_dirs, read_masks, read_prediction, read_record, read_record_unchecked, write_depth, write_masks,
    write_prediction, write_record, RecordError, DEPTH_FILE, SEGMENTATION_FILE,
};
use tap3d_core::trackset::FloatWidth;
use tap3d_core::FocalRule;

#[derive(Debug, Parser)]
#[command(name = "tap3d", version, about = "Evaluate 3D point tracks against ground truth")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score predictions against ground truth and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Generate synthetic ground-truth videos.
    Synth(SynthArgs),
    /// Drop flickering or off-mask tracks from a record.
    Filter(FilterArgs),
    /// Reference predictors.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Dataset statistics: static tracks and speed histograms.
    Stats(StatsArgs),
    /// Check records and list every broken rule.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RescaleArg {
    Median,
    #[value(name = "per_track", alias = "per-track")]
    PerTrack,
    Local,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ThresholdArg {
    Px,
    Metric,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoolingArg {
    Video,
    Points,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FocalArg {
    Geometric,
    Arithmetic,
    Fx,
    Fy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PixelScaleArg {
    Raster,
    Native,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Ground-truth record directory, or a directory of them.
    #[arg(long)]
    gt: PathBuf,
    /// Prediction directory laid out like `--gt`.
    #[arg(long)]
    pred: PathBuf,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "median")]
    rescale: RescaleArg,
    /// Tubelet radius in meters for `--rescale local`; per-source default otherwise.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum, default_value = "px")]
    thresholds: ThresholdArg,
    #[arg(long, value_enum, default_value = "video")]
    pooling: PoolingArg,
    /// Compute the median scale over visible frames only.
    #[arg(long)]
    visible_only_median: bool,
    #[arg(long, value_enum, default_value = "geometric")]
    focal: FocalArg,
    #[arg(long, value_enum, default_value = "raster")]
    pixel_scale: PixelScaleArg,
    /// Skip the 2D metrics.
    #[arg(long)]
    no_2d: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scene description (TOML). Without it a random scene is built from `--seed`.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Number of videos; seeds increase from the base seed.
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 48)]
    frames: usize,
    #[arg(long, default_value_t = 128)]
    tracks: usize,
    /// Random scenes: freeze camera and objects.
    #[arg(long)]
    r#static: bool,
    /// Write only the record, not depth and segmentation maps.
    #[arg(long)]
    no_maps: bool,
    /// Store coordinates as float32.
    #[arg(long)]
    f32: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct FilterArgs {
    /// Record directory.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `[T, H, W]` mask stack; nonzero is on-mask.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Where to write the JSON filter report.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0.10)]
    flicker_fraction: f64,
    #[arg(long, default_value_t = 0.75)]
    mask_fraction: f64,
    /// Count mask containment over all frames, not just visible ones.
    #[arg(long)]
    whole_video: bool,
}

#[derive(Debug, Subcommand)]
enum BaselineCommand {
    /// Hold each unprojected query point fixed in camera coordinates.
    Static(BaselineArgs),
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    static_epsilon: f64,
    /// Speed histogram bin edges in m/s, comma separated.
    #[arg(long, value_delimiter = ',')]
    bins: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TAP3D_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let kind = e.downcast_ref::<RecordError>().map_or("error", RecordError::kind);
            let message = format!("{e:#}");
            eprintln!("{}", json!({ "error": kind, "message": message }));
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Evaluate(args) => evaluate(args),
        Command::Synth(args) => synth(args),
        Command::Filter(args) => filter(args),
        Command::Baseline(BaselineCommand::Static(args)) => baseline(args),
        Command::Stats(args) => stats(args),
        Command::Validate(args) => validate(args),
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json serializes");
    s.push('\n');
    s
}

fn record_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let dirs = list_record_dirs(root)?;
    if dirs.is_empty() {
        bail!("no record directories under {}", root.display());
    }
    Ok(dirs)
}

fn dir_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    if let Some(tau) = args.tau {
        if !(tau > 0.0 && tau.is_finite()) {
            bail!("--tau must be positive, got {tau}");
        }
    }
    let options = EvalOptions {
        rescale: match args.rescale {
            RescaleArg::Median => RescaleKind::Median,
            RescaleArg::PerTrack => RescaleKind::PerTrack,
            RescaleArg::Local => RescaleKind::Local,
        },
        tau: args.tau,
        thresholds: match args.thresholds {
            ThresholdArg::Px => ThresholdFamily::pixel_default(),
            ThresholdArg::Metric => ThresholdFamily::metric_default(),
        },
        focal: match args.focal {
            FocalArg::Geometric => FocalRule::GeometricMean,
            FocalArg::Arithmetic => FocalRule::ArithmeticMean,
            FocalArg::Fx => FocalRule::Fx,
            FocalArg::Fy => FocalRule::Fy,
        },
        pooling: match args.pooling {
            PoolingArg::Video => Pooling::Video,
            PoolingArg::Points => Pooling::Points,
        },
        visible_only_median: args.visible_only_median,
        pixel_scale: match args.pixel_scale {
            PixelScaleArg::Raster => PixelScaleMode::Raster,
            PixelScaleArg::Native => PixelScaleMode::Native,
        },
        two_d: !args.no_2d,
    };

    let gt_dirs = record_dirs(&args.gt)?;
    let single = gt_dirs.len() == 1 && gt_dirs[0] == args.gt;
    let pairs: Vec<(PathBuf, PathBuf)> = gt_dirs
        .into_iter()
        .map(|gt| {
            let pred = if single { args.pred.clone() } else { args.pred.join(dir_name(&gt)) };
            (gt, pred)
        })
        .collect();
    info!("evaluating {} video(s) with {} job(s)", pairs.len(), args.jobs);

    let results = run_parallel(&pairs, args.jobs, |(gt_dir, pred_dir)| -> Result<_> {
        let gt = read_record(gt_dir).with_context(|| format!("ground truth {}", gt_dir.display()))?;
        let pred = read_prediction(pred_dir).with_context(|| format!("prediction {}", pred_dir.display()))?;
        let eval = evaluate_video(&gt, &pred, &options).with_context(|| format!("video {}", gt.video_id))?;
        debug!("{}: {:?}", eval.video_id, eval.scores.as_ref().map(|s| s.aj_3d));
        Ok(eval)
    })?;
    let videos = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut seen = std::collections::BTreeSet::new();
    for v in &videos {
        if !seen.insert(v.video_id.as_str()) {
            bail!("duplicate video id {}", v.video_id);
        }
    }

    let report = Report::aggregate(options, videos, Vec::<Diagnostic>::new());
    for d in &report.diagnostics {
        warn!("{}: {}: {}", d.video_id, d.kind, d.detail);
    }
    write_output(args.out.as_deref(), &report.to_json_string())?;
    if report.overall.is_none() {
        eprintln!("{}", json!({ "error": "no_scored_videos", "message": "every video was excluded" }));
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(args: SynthArgs) -> Result<ExitCode> {
    let base = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(SceneSpec::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => None,
    };
    let specs: Vec<SceneSpec> = (0..args.count)
        .map(|i| match &base {
            Some(spec) => SceneSpec {
                seed: spec.seed + i,
                ..spec.clone()
            },
            None => SceneSpec::random(args.seed + i, args.frames, args.tracks, !args.r#static),
        })
        .collect();
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let out = &args.out;
    let results = run_parallel(&specs, args.jobs, |spec| -> Result<String> {
        let mut record;
        let dir;
        if args.no_maps {
            record = spec.generate()?;
            dir = out.join(&record.video_id);
        } else {
            let scene = synth_scene(spec)?;
            record = scene.record;
            dir = out.join(&record.video_id);
            fs::create_dir_all(&dir)?;
            write_depth(&scene.depth, dir.join(DEPTH_FILE))?;
            write_masks(&scene.segmentation, dir.join(SEGMENTATION_FILE))?;
        }
        if args.f32 {
            record.storage = FloatWidth::F32;
        }
        write_record(&record, &dir)?;
        Ok(record.video_id)
    })?;
    for r in results {
        let id = r?;
        info!("wrote {id}");
    }
    Ok(ExitCode::SUCCESS)
}

fn filter(args: FilterArgs) -> Result<ExitCode> {
    let config = FilterConfig {
        flicker_fraction: args.flicker_fraction,
        mask_fraction: args.mask_fraction,
        mask_visible_only: !args.whole_video,
        ..FilterConfig::default()
    };
    let record = read_record(&args.input)?;
    let masks = args.masks.as_ref().map(read_masks).transpose()?;
    let (filtered, report) = apply_filters(&record, masks.as_deref(), &config)?;
    if filtered.num_tracks() == 0 {
        bail!("every track of {} was filtered out", record.video_id);
    }
    write_record(&filtered, &args.out)?;
    info!("{}: kept {} of {}", record.video_id, report.kept, record.num_tracks());
    if let Some(path) = &args.report {
        write_output(Some(path), &pretty(&serde_json::to_value(&report)?))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn baseline(args: BaselineArgs) -> Result<ExitCode> {
    let dirs = record_dirs(&args.gt)?;
    let single = dirs.len() == 1 && dirs[0] == args.gt;
    let out = &args.out;
    let results = run_parallel(&dirs, args.jobs, |dir| -> Result<()> {
        let gt = read_record(dir)?;
        let pred = static_baseline(&gt)?;
        let target = if single { out.clone() } else { out.join(dir_name(dir)) };
        write_prediction(&pred, target, gt.storage)?;
        Ok(())
    })?;
    results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ExitCode::SUCCESS)
}

fn stats(args: StatsArgs) -> Result<ExitCode> {
    let config = FilterConfig {
        static_epsilon: args.static_epsilon,
        ..FilterConfig::default()
    };
    config.check()?;
    let edges = args.bins.clone().unwrap_or_else(default_speed_edges);
    Histogram::new(edges.clone())?;
    let dirs = record_dirs(&args.input)?;
    let results = run_parallel(&dirs, args.jobs, |dir| -> Result<_> {
        let record = read_record(dir)?;
        Ok(record_stats(&record, &config, edges.clone())?)
    })?;
    let per_video = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut histogram = Histogram::new(edges)?;
    per_video.iter().for_each(|s| histogram.merge(&s.speed_histogram));
    let tracks: usize = per_video.iter().map(|s| s.num_tracks).sum();
    let static_tracks: usize = per_video.iter().map(|s| s.static_tracks).sum();
    let speed_sum: f64 = per_video.iter().map(|s| s.mean_speed * s.num_tracks as f64).sum();
    let value = json!({
        "num_videos": per_video.len(),
        "num_tracks": tracks,
        "static_tracks": static_tracks,
        "static_fraction": if tracks > 0 { static_tracks as f64 / tracks as f64 } else { 0.0 },
        "mean_speed": if tracks > 0 { speed_sum / tracks as f64 } else { 0.0 },
        "speed_histogram": histogram,
        "static_epsilon": config.static_epsilon,
        "per_video": per_video,
    });
    write_output(args.out.as_deref(), &pretty(&value))?;
    Ok(ExitCode::SUCCESS)
}

fn validate(args: ValidateArgs) -> Result<ExitCode> {
    let dirs = record_dirs(&args.input)?;
    let mut failed = 0usize;
    for dir in &dirs {
        let problems: Vec<Value> = match read_record_unchecked(dir) {
            Ok(record) => record
                .validate()
                .into_iter()
                .map(|v| json!({ "rule": serde_json::to_value(&v).unwrap()["rule"], "message": v.to_string() }))
                .collect(),
            Err(e) => vec![json!({ "rule": e.kind(), "message": e.to_string() })],
        };
        if problems.is_empty() {
            println!("{}", json!({ "record": dir.display().to_string(), "ok": true }));
        } else {
            failed += 1;
            eprintln!(
                "{}",
                json!({ "record": dir.display().to_string(), "ok": false, "violations": problems })
            );
        }
    }
    if failed > 0 {
        return Err(anyhow!("{failed} of {} record(s) failed validation", dirs.len()));
    }
    Ok(ExitCode::SUCCESS)
}
