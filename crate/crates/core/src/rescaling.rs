//! Scale alignment of monocular predictions before scoring.
//!
//! Three regimes are supported:
//!
//! * [`RescaleMode::GlobalMedian`]: one factor per video, the median of the
//!   ground-truth to prediction norm ratios.
//! * [`RescaleMode::PerTrajectory`]: one factor per track, taken at its query
//!   frame.
//! * [`RescaleMode::LocalNeighborhood`]: every track anchors a tubelet made of
//!   all samples within `tau` meters of it on the same frame; the tubelet is
//!   rescaled by the anchor's query-frame ratio and scored as one trajectory.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;
use crate::trackset::{GroundTruthRecord, PredictionRecord, SourceTag, Tracks3};

/// Predicted norms at or below this value (meters) carry no scale information.
pub const DEGENERATE_NORM: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RescaleError {
    #[error("every predicted point has a norm below {DEGENERATE_NORM:e} m")]
    AllDegenerate,
    #[error("track {track}: predicted query point has a degenerate norm")]
    DegenerateQueryPrediction { track: usize },
    #[error("tubelet radius must be positive and finite, got {0}")]
    InvalidTau(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RescaleMode {
    GlobalMedian,
    PerTrajectory,
    LocalNeighborhood { tau: f64 },
}

impl RescaleMode {
    pub fn name(&self) -> &'static str {
        match self {
            RescaleMode::GlobalMedian => "median",
            RescaleMode::PerTrajectory => "per_track",
            RescaleMode::LocalNeighborhood { .. } => "local",
        }
    }
}

/// Default tubelet radius for a data source: 3 cm for indoor capture,
/// 10 cm for road scenes.
pub fn default_tau(source: SourceTag) -> f64 {
    match source {
        SourceTag::DriveTrack => 0.10,
        SourceTag::Adt | SourceTag::PStudio | SourceTag::Synthetic => 0.03,
    }
}

/// Median with the even-count convention of averaging the two central values.
/// Returns `None` for an empty slice. Reorders `values`.
pub fn median(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        Some(upper)
    } else {
        let lower = lower.iter().copied().max_by(f64::total_cmp)?;
        Some(0.5 * (lower + upper))
    }
}

/// Median of `|P| / |P̂|` over every sample whose prediction is not degenerate.
///
/// With `visible_only` the ratios are restricted to ground-truth visible
/// samples; by default occluded samples take part as well.
pub fn global_median_factor(
    gt: &GroundTruthRecord,
    pred: &PredictionRecord,
    visible_only: bool,
) -> Result<f64, RescaleError> {
    let mut ratios = Vec::with_capacity(gt.tracks.points().len());
    for ((p, p_hat), &vis) in gt
        .tracks
        .points()
        .iter()
        .zip(pred.tracks.points())
        .zip(gt.visibility.flags())
    {
        if visible_only && !vis {
            continue;
        }
        let pred_norm = p_hat.coords.norm();
        if pred_norm > DEGENERATE_NORM {
            ratios.push(p.coords.norm() / pred_norm);
        }
    }
    median(&mut ratios).ok_or(RescaleError::AllDegenerate)
}

/// Query-frame ratio `|P_tq| / |P̂_tq|` for one track.
pub fn per_trajectory_factor(
    gt: &GroundTruthRecord,
    pred: &PredictionRecord,
    track: usize,
) -> Result<f64, RescaleError> {
    let t_q = gt.queries[track].frame;
    let pred_norm = pred.tracks.get(track, t_q).coords.norm();
    if pred_norm > DEGENERATE_NORM {
        Ok(gt.tracks.get(track, t_q).coords.norm() / pred_norm)
    } else {
        Err(RescaleError::DegenerateQueryPrediction { track })
    }
}

/// One factor per track; `None` marks a degenerate query prediction.
pub fn per_trajectory_factors(gt: &GroundTruthRecord, pred: &PredictionRecord) -> Vec<Option<f64>> {
    (0..gt.num_tracks())
        .map(|i| per_trajectory_factor(gt, pred, i).ok())
        .collect()
}

/// The samples within `tau` of an anchor track, frame by frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tubelet {
    pub anchor: usize,
    /// `(track, frame)` pairs sorted by track then frame.
    pub members: Vec<(usize, usize)>,
}

/// Builds one tubelet per track: all `(j, t)` with `|P^j_t - P^i_t| < tau`.
pub fn build_tubelets(tracks: &Tracks3, tau: f64) -> Result<Vec<Tubelet>, RescaleError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(RescaleError::InvalidTau(tau));
    }
    let (q_count, t_count) = (tracks.num_tracks(), tracks.num_frames());
    let mut members = vec![Vec::new(); q_count];
    let mut frame_points = Vec::with_capacity(q_count);
    for t in 0..t_count {
        frame_points.clear();
        frame_points.extend((0..q_count).map(|q| *tracks.get(q, t)));
        let grid = CellGrid::new(&frame_points, tau);
        for (i, anchor_members) in members.iter_mut().enumerate() {
            let anchor = frame_points[i];
            grid.for_each_candidate(&anchor, |j| {
                if (frame_points[j] - anchor).norm() < tau {
                    anchor_members.push((j, t));
                }
            });
        }
    }
    Ok(members
        .into_iter()
        .enumerate()
        .map(|(anchor, mut members)| {
            members.sort_unstable();
            Tubelet { anchor, members }
        })
        .collect())
}

/// Uniform grid over one frame's points with cells of side `cell`.
struct CellGrid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl CellGrid {
    fn new(points: &[Point3], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(p: &Point3, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Visits every point in the 27 cells around `p`; a point closer than
    /// `cell` to `p` is always among them.
    fn for_each_candidate(&self, p: &Point3, mut visit: impl FnMut(usize)) {
        let [kx, ky, kz] = Self::key(p, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&[kx + dx, ky + dy, kz + dz]) {
                        ids.iter().copied().for_each(&mut visit);
                    }
                }
            }
        }
    }
}

/// A tubelet together with the anchor's scale factor (`None` when the anchor's
/// query prediction is degenerate).
#[derive(Debug, Clone, PartialEq)]
pub struct TubeletUnit {
    pub tubelet: Tubelet,
    pub scale: Option<f64>,
}

/// One member of a rescaled evaluation unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitSample {
    pub gt: Point3,
    /// `None` forces the sample to count as positionally incorrect.
    pub pred: Option<Point3>,
    pub visible: bool,
    pub pred_visible: bool,
}

impl TubeletUnit {
    pub fn samples<'a>(
        &'a self,
        gt: &'a GroundTruthRecord,
        pred: &'a PredictionRecord,
    ) -> impl Iterator<Item = UnitSample> + 'a {
        self.tubelet.members.iter().map(move |&(j, t)| UnitSample {
            gt: *gt.tracks.get(j, t),
            pred: self.scale.map(|s| pred.tracks.get(j, t) * s),
            visible: gt.visibility.get(j, t),
            pred_visible: pred.visibility.get(j, t),
        })
    }
}

/// Predictions after scale alignment.
#[derive(Debug, Clone, PartialEq)]
pub enum Rescaled {
    /// A whole rescaled prediction. Tracks flagged in `degenerate` have no
    /// usable scale and score as positionally incorrect everywhere.
    Whole {
        prediction: PredictionRecord,
        factors: Vec<f64>,
        degenerate: Vec<bool>,
    },
    Tubelets(Vec<TubeletUnit>),
}

/// Applies `mode` to `pred`.
pub fn apply_rescale(
    gt: &GroundTruthRecord,
    pred: &PredictionRecord,
    mode: RescaleMode,
    visible_only_median: bool,
) -> Result<Rescaled, RescaleError> {
    match mode {
        RescaleMode::GlobalMedian => {
            let factor = global_median_factor(gt, pred, visible_only_median)?;
            Ok(Rescaled::Whole {
                prediction: pred.scaled(factor),
                factors: vec![factor],
                degenerate: vec![false; gt.num_tracks()],
            })
        }
        RescaleMode::PerTrajectory => {
            let factors = per_trajectory_factors(gt, pred);
            let mut prediction = pred.clone();
            for (i, factor) in factors.iter().enumerate() {
                let s = factor.unwrap_or(1.0);
                prediction.tracks.track_mut(i).iter_mut().for_each(|p| *p *= s);
            }
            Ok(Rescaled::Whole {
                prediction,
                degenerate: factors.iter().map(Option::is_none).collect(),
                factors: factors.into_iter().map(|f| f.unwrap_or(f64::NAN)).collect(),
            })
        }
        RescaleMode::LocalNeighborhood { tau } => {
            let factors = per_trajectory_factors(gt, pred);
            let tubelets = build_tubelets(&gt.tracks, tau)?;
            Ok(Rescaled::Tubelets(
                tubelets
                    .into_iter()
                    .map(|tubelet| TubeletUnit {
                        scale: factors[tubelet.anchor],
                        tubelet,
                    })
                    .collect(),
            ))
        }
    }
}
