//! APD, occlusion accuracy and average Jaccard for 3D and 2D trajectories.
//!
//! All scores are computed from integer counts ([`JaccardCounts`]) so that
//! per-video, per-tubelet and pooled evaluation share one code path. A
//! prediction is positionally correct (`alpha`) when its distance to the
//! ground truth is strictly below the threshold radius.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, FocalRule, Point2, Point3};
use crate::rescaling::UnitSample;
use crate::trackset::{GroundTruthRecord, PredictionRecord, TrackSet2D, Visibility};

pub const PIXEL_THRESHOLDS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
pub const METRIC_THRESHOLDS: [f64; 5] = [0.01, 0.04, 0.16, 0.64, 2.56];
/// Side of the reference raster 2D errors are normalized to.
pub const RASTER_SIZE: f64 = 256.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no visible ground-truth points")]
    NoVisiblePoints,
    #[error("thresholds must be positive and strictly increasing: {0:?}")]
    InvalidThresholds(Vec<f64>),
    #[error("ground truth and prediction shapes differ")]
    ShapeMismatch,
}

/// Correctness radii: pixel thresholds lifted to the ground-truth depth, or
/// fixed metric radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum ThresholdFamily {
    PixelAdaptive(Vec<f64>),
    FixedMetric(Vec<f64>),
}

impl ThresholdFamily {
    pub fn pixel_default() -> Self {
        Self::PixelAdaptive(PIXEL_THRESHOLDS.to_vec())
    }

    pub fn metric_default() -> Self {
        Self::FixedMetric(METRIC_THRESHOLDS.to_vec())
    }

    pub fn pixel(values: Vec<f64>) -> Result<Self, MetricError> {
        check_thresholds(&values)?;
        Ok(Self::PixelAdaptive(values))
    }

    pub fn metric(values: Vec<f64>) -> Result<Self, MetricError> {
        check_thresholds(&values)?;
        Ok(Self::FixedMetric(values))
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Self::PixelAdaptive(v) | Self::FixedMetric(v) => v,
        }
    }

    pub fn len(&self) -> usize {
        self.values().len()
    }

    pub fn is_empty(&self) -> bool {
        self.values().is_empty()
    }

    /// Writes the metric radius of every threshold for a ground-truth point.
    /// Pixel-adaptive radii of points at non-positive depth are zero, so no
    /// prediction can be within them.
    pub fn radii_into(&self, gt: &Point3, intrinsics: &CameraIntrinsics, focal: FocalRule, out: &mut [f64]) {
        match self {
            Self::PixelAdaptive(px) => {
                let per_pixel = if gt.z > 0.0 { gt.z / intrinsics.focal(focal) } else { 0.0 };
                for (r, d) in out.iter_mut().zip(px) {
                    *r = per_pixel * d;
                }
            }
            Self::FixedMetric(m) => out.copy_from_slice(m),
        }
    }
}

fn check_thresholds(values: &[f64]) -> Result<(), MetricError> {
    let ok = !values.is_empty()
        && values.iter().all(|v| v.is_finite() && *v > 0.0)
        && values.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(MetricError::InvalidThresholds(values.to_vec()))
    }
}

/// Scores per threshold plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScores {
    pub per_threshold: Vec<f64>,
    pub mean: f64,
}

impl ThresholdScores {
    pub fn from_values(per_threshold: Vec<f64>) -> Self {
        let mean = per_threshold.iter().sum::<f64>() / per_threshold.len() as f64;
        Self { per_threshold, mean }
    }

    /// Element-wise mean of several score sets with the same threshold count.
    pub fn average<'a>(scores: impl IntoIterator<Item = &'a ThresholdScores>) -> Option<ThresholdScores> {
        let mut iter = scores.into_iter();
        let first = iter.next()?;
        let mut sums = first.per_threshold.clone();
        let mut n = 1usize;
        for s in iter {
            for (acc, v) in sums.iter_mut().zip(&s.per_threshold) {
                *acc += v;
            }
            n += 1;
        }
        Some(Self::from_values(sums.into_iter().map(|s| s / n as f64).collect()))
    }
}

/// Sums entering the APD and AJ formulas.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JaccardCounts {
    /// Σ v
    pub visible: u64,
    /// Σ (1 - v) v̂
    pub occluded_pred_visible: u64,
    /// Σ v v̂
    pub visible_pred_visible: u64,
    /// Σ v α, per threshold
    pub within: Vec<u64>,
    /// Σ v v̂ α, per threshold
    pub true_positive: Vec<u64>,
}

impl JaccardCounts {
    pub fn new(num_thresholds: usize) -> Self {
        Self {
            within: vec![0; num_thresholds],
            true_positive: vec![0; num_thresholds],
            ..Default::default()
        }
    }

    /// Adds one sample. `alpha` is consulted only for visible samples.
    pub fn add(&mut self, visible: bool, pred_visible: bool, alpha: impl Fn(usize) -> bool) {
        if visible {
            self.visible += 1;
            if pred_visible {
                self.visible_pred_visible += 1;
            }
            for k in 0..self.within.len() {
                if alpha(k) {
                    self.within[k] += 1;
                    if pred_visible {
                        self.true_positive[k] += 1;
                    }
                }
            }
        } else if pred_visible {
            self.occluded_pred_visible += 1;
        }
    }

    pub fn merge(&mut self, other: &JaccardCounts) {
        if self.within.is_empty() {
            self.within = vec![0; other.within.len()];
            self.true_positive = vec![0; other.true_positive.len()];
        }
        self.visible += other.visible;
        self.occluded_pred_visible += other.occluded_pred_visible;
        self.visible_pred_visible += other.visible_pred_visible;
        for (a, b) in self.within.iter_mut().zip(&other.within) {
            *a += b;
        }
        for (a, b) in self.true_positive.iter_mut().zip(&other.true_positive) {
            *a += b;
        }
    }

    pub fn apd(&self) -> Result<ThresholdScores, MetricError> {
        if self.visible == 0 {
            return Err(MetricError::NoVisiblePoints);
        }
        let v = self.visible as f64;
        Ok(ThresholdScores::from_values(
            self.within.iter().map(|&w| w as f64 / v).collect(),
        ))
    }

    pub fn aj(&self) -> Result<ThresholdScores, MetricError> {
        if self.visible == 0 {
            return Err(MetricError::NoVisiblePoints);
        }
        Ok(ThresholdScores::from_values(
            self.true_positive
                .iter()
                .map(|&tp| {
                    let missed = self.visible_pred_visible - tp;
                    tp as f64 / (self.visible + self.occluded_pred_visible + missed) as f64
                })
                .collect(),
        ))
    }
}

/// Geometry needed to turn thresholds into radii.
#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    pub intrinsics: CameraIntrinsics,
    pub family: ThresholdFamily,
    pub focal: FocalRule,
}

impl Scorer {
    pub fn new(intrinsics: CameraIntrinsics, family: ThresholdFamily, focal: FocalRule) -> Self {
        Self {
            intrinsics,
            family,
            focal,
        }
    }

    /// Accumulates counts over arbitrary samples (a whole video or a tubelet).
    pub fn count(&self, samples: impl IntoIterator<Item = UnitSample>) -> JaccardCounts {
        let n = self.family.len();
        let mut counts = JaccardCounts::new(n);
        let mut radii = vec![0.0; n];
        for s in samples {
            let dist = match (s.visible, s.pred) {
                (true, Some(p)) => {
                    self.family.radii_into(&s.gt, &self.intrinsics, self.focal, &mut radii);
                    (p - s.gt).norm()
                }
                _ => f64::INFINITY,
            };
            counts.add(s.visible, s.pred_visible, |k| dist < radii[k]);
        }
        counts
    }

    /// Per-threshold α for every ground-truth visible sample, in track-major
    /// order. Tracks flagged in `degenerate` are never correct.
    pub fn position_indicators(
        &self,
        gt: &GroundTruthRecord,
        pred: &PredictionRecord,
        degenerate: Option<&[bool]>,
    ) -> Vec<Vec<bool>> {
        let mut out = vec![Vec::new(); self.family.len()];
        let mut radii = vec![0.0; self.family.len()];
        for s in whole_samples(gt, pred, degenerate) {
            if !s.visible {
                continue;
            }
            self.family.radii_into(&s.gt, &self.intrinsics, self.focal, &mut radii);
            let dist = s.pred.map_or(f64::INFINITY, |p| (p - s.gt).norm());
            for (k, row) in out.iter_mut().enumerate() {
                row.push(dist < radii[k]);
            }
        }
        out
    }
}

/// Every sample of a video in track-major order.
pub fn whole_samples<'a>(
    gt: &'a GroundTruthRecord,
    pred: &'a PredictionRecord,
    degenerate: Option<&'a [bool]>,
) -> impl Iterator<Item = UnitSample> + 'a {
    let t_count = gt.num_frames().max(1);
    gt.tracks
        .points()
        .iter()
        .zip(pred.tracks.points())
        .zip(gt.visibility.flags().iter().zip(pred.visibility.flags()))
        .enumerate()
        .map(move |(idx, ((p, p_hat), (&v, &v_hat)))| {
            let bad = degenerate.is_some_and(|d| d[idx / t_count]);
            UnitSample {
                gt: *p,
                pred: (!bad).then_some(*p_hat),
                visible: v,
                pred_visible: v_hat,
            }
        })
}

fn check_shapes(gt: &GroundTruthRecord, pred: &PredictionRecord) -> Result<(), MetricError> {
    if pred.check_compatible(gt).is_err() {
        return Err(MetricError::ShapeMismatch);
    }
    Ok(())
}

/// Fraction of visible ground-truth points predicted within each threshold.
/// Predicted visibility plays no part.
pub fn apd3d(
    gt: &GroundTruthRecord,
    pred: &PredictionRecord,
    family: &ThresholdFamily,
    focal: FocalRule,
) -> Result<ThresholdScores, MetricError> {
    check_shapes(gt, pred)?;
    Scorer::new(gt.intrinsics, family.clone(), focal)
        .count(whole_samples(gt, pred, None))
        .apd()
}

/// 3D average Jaccard per threshold.
pub fn aj3d(
    gt: &GroundTruthRecord,
    pred: &PredictionRecord,
    family: &ThresholdFamily,
    focal: FocalRule,
) -> Result<ThresholdScores, MetricError> {
    check_shapes(gt, pred)?;
    Scorer::new(gt.intrinsics, family.clone(), focal)
        .count(whole_samples(gt, pred, None))
        .aj()
}

/// Matching visibility flags, summed for pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OcclusionCounts {
    pub matches: u64,
    pub total: u64,
}

impl OcclusionCounts {
    pub fn from_visibility(gt: &Visibility, pred: &Visibility) -> Self {
        let matches = gt
            .flags()
            .iter()
            .zip(pred.flags())
            .filter(|(a, b)| a == b)
            .count() as u64;
        Self {
            matches,
            total: gt.flags().len() as u64,
        }
    }

    pub fn merge(&mut self, other: &OcclusionCounts) {
        self.matches += other.matches;
        self.total += other.total;
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.matches as f64 / self.total as f64)
    }
}

/// Per-track fraction of frames where predicted and true visibility agree,
/// averaged over tracks.
pub fn occlusion_accuracy(gt: &Visibility, pred: &Visibility) -> f64 {
    let per_track: Vec<f64> = gt
        .iter_tracks()
        .zip(pred.iter_tracks())
        .map(|(a, b)| {
            let matches = a.iter().zip(b).filter(|(x, y)| x == y).count();
            matches as f64 / a.len() as f64
        })
        .collect();
    per_track.iter().sum::<f64>() / per_track.len() as f64
}

/// Pixel-space error normalization for 2D scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PixelScale {
    /// Errors in native pixels.
    Native,
    /// Errors rescaled to a 256×256 raster of an image with this size.
    Raster { width: u32, height: u32 },
}

impl PixelScale {
    fn distance(&self, a: &Point2, b: &Point2) -> f64 {
        let d = a - b;
        match self {
            PixelScale::Native => d.norm(),
            PixelScale::Raster { width, height } => {
                let sx = RASTER_SIZE / *width as f64;
                let sy = RASTER_SIZE / *height as f64;
                (d.x * sx).hypot(d.y * sy)
            }
        }
    }
}

/// Counts for 2D tracks. Predictions without a pixel (behind the camera)
/// are never within threshold.
pub fn count_2d(
    gt: &TrackSet2D,
    pred: &TrackSet2D,
    thresholds: &[f64],
    scale: PixelScale,
) -> Result<JaccardCounts, MetricError> {
    if gt.num_tracks() != pred.num_tracks() || gt.num_frames() != pred.num_frames() {
        return Err(MetricError::ShapeMismatch);
    }
    let mut counts = JaccardCounts::new(thresholds.len());
    for q in 0..gt.num_tracks() {
        for t in 0..gt.num_frames() {
            let visible = gt.visibility().get(q, t);
            let dist = match (gt.get(q, t), pred.get(q, t)) {
                (Some(a), Some(b)) => scale.distance(&b, &a),
                _ => f64::INFINITY,
            };
            counts.add(visible, pred.visibility().get(q, t), |k| dist < thresholds[k]);
        }
    }
    Ok(counts)
}

/// Per-threshold 2D α for every visible ground-truth sample, track-major.
pub fn position_indicators_2d(
    gt: &TrackSet2D,
    pred: &TrackSet2D,
    thresholds: &[f64],
    scale: PixelScale,
) -> Vec<Vec<bool>> {
    let mut out = vec![Vec::new(); thresholds.len()];
    for q in 0..gt.num_tracks() {
        for t in 0..gt.num_frames() {
            if !gt.visibility().get(q, t) {
                continue;
            }
            let dist = match (gt.get(q, t), pred.get(q, t)) {
                (Some(a), Some(b)) => scale.distance(&b, &a),
                _ => f64::INFINITY,
            };
            for (k, row) in out.iter_mut().enumerate() {
                row.push(dist < thresholds[k]);
            }
        }
    }
    out
}

pub fn apd2d(
    gt: &TrackSet2D,
    pred: &TrackSet2D,
    thresholds: &[f64],
    scale: PixelScale,
) -> Result<ThresholdScores, MetricError> {
    count_2d(gt, pred, thresholds, scale)?.apd()
}

pub fn aj2d(
    gt: &TrackSet2D,
    pred: &TrackSet2D,
    thresholds: &[f64],
    scale: PixelScale,
) -> Result<ThresholdScores, MetricError> {
    count_2d(gt, pred, thresholds, scale)?.aj()
}
