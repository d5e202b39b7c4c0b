//! Track quality filters and dataset statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::MaskMap;
use crate::geometry::Point3;
use crate::trackset::{GroundTruthRecord, SourceTag, TrackSet2D, Visibility};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Drop a track whose visibility flips more than this fraction of frames.
    pub flicker_fraction: f64,
    /// Drop a track that sits on its object mask less than this fraction of
    /// the time.
    pub mask_fraction: f64,
    /// Tracks whose points all lie closer than this (meters) are static.
    pub static_epsilon: f64,
    /// Count mask containment only over ground-truth visible frames.
    pub mask_visible_only: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            flicker_fraction: 0.10,
            mask_fraction: 0.75,
            static_epsilon: 0.01,
            mask_visible_only: true,
        }
    }
}

impl FilterConfig {
    pub fn check(&self) -> Result<(), FilterError> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.flicker_fraction) {
            return Err(FilterError::InvalidConfig(format!("flicker_fraction {}", self.flicker_fraction)));
        }
        if !unit(self.mask_fraction) {
            return Err(FilterError::InvalidConfig(format!("mask_fraction {}", self.mask_fraction)));
        }
        if !(self.static_epsilon > 0.0 && self.static_epsilon.is_finite()) {
            return Err(FilterError::InvalidConfig(format!("static_epsilon {}", self.static_epsilon)));
        }
        Ok(())
    }
}

pub fn count_transitions(flags: &[bool]) -> usize {
    flags.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Keep flags: a track is dropped when its visibility changes state more
/// than `flicker_fraction · T` times.
pub fn flicker_filter(visibility: &Visibility, cfg: &FilterConfig) -> Vec<bool> {
    let limit = cfg.flicker_fraction * visibility.num_frames() as f64;
    visibility
        .iter_tracks()
        .map(|flags| count_transitions(flags) as f64 <= limit)
        .collect()
}

/// Keep flags: a track is dropped when it lies on the mask for less than
/// `mask_fraction` of the considered frames. Tracks with no considered frame
/// are kept.
pub fn mask_containment_filter(
    tracks: &TrackSet2D,
    masks: &[MaskMap],
    cfg: &FilterConfig,
) -> Result<Vec<bool>, FilterError> {
    if masks.len() != tracks.num_frames() {
        return Err(FilterError::DimensionMismatch(format!(
            "{} masks for {} frames",
            masks.len(),
            tracks.num_frames()
        )));
    }
    if let Some(first) = masks.first() {
        if let Some(m) = masks.iter().find(|m| (m.width(), m.height()) != (first.width(), first.height())) {
            return Err(FilterError::DimensionMismatch(format!(
                "mask sizes differ: {}x{} vs {}x{}",
                m.width(),
                m.height(),
                first.width(),
                first.height()
            )));
        }
    }
    Ok((0..tracks.num_tracks())
        .map(|q| {
            let mut considered = 0usize;
            let mut on_mask = 0usize;
            for (t, mask) in masks.iter().enumerate() {
                if cfg.mask_visible_only && !tracks.visibility().get(q, t) {
                    continue;
                }
                considered += 1;
                if tracks.get(q, t).is_some_and(|p| mask.is_set(&p)) {
                    on_mask += 1;
                }
            }
            considered == 0 || on_mask as f64 >= cfg.mask_fraction * considered as f64
        })
        .collect())
}

/// True iff every pair of points on the track is closer than `epsilon`.
pub fn static_track_detector(track: &[Point3], epsilon: f64) -> bool {
    let Some(first) = track.first() else {
        return true;
    };
    let (mut lo, mut hi) = (first.coords, first.coords);
    for p in track {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    let extent = hi - lo;
    // two points realize each axis extent, so their distance is at least it
    if extent.max() >= epsilon {
        return false;
    }
    // every pair fits in the bounding box
    if extent.norm() < epsilon {
        return true;
    }
    let eps2 = epsilon * epsilon;
    track
        .iter()
        .enumerate()
        .all(|(i, a)| track[i + 1..].iter().all(|b| (a - b).norm_squared() < eps2))
}

/// Mean speed (m/s) of one trajectory from consecutive-frame displacements.
pub fn mean_speed(track: &[Point3], fps: f64) -> f64 {
    if track.len() < 2 {
        return 0.0;
    }
    let total: f64 = track.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    total / (track.len() - 1) as f64 * fps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// `counts[i]` covers `[edges[i], edges[i + 1])`; the last bin also holds
    /// its right edge.
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Result<Self, FilterError> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(FilterError::InvalidConfig(format!("histogram edges {edges:?}")));
        }
        let bins = edges.len() - 1;
        Ok(Self {
            edges,
            counts: vec![0; bins],
            below: 0,
            above: 0,
        })
    }

    pub fn add(&mut self, value: f64) {
        let last = *self.edges.last().expect("at least two edges");
        if value < self.edges[0] {
            self.below += 1;
        } else if value > last {
            self.above += 1;
        } else {
            let bin = self.edges.partition_point(|&e| e <= value).saturating_sub(1);
            let last_bin = self.counts.len() - 1;
            self.counts[bin.min(last_bin)] += 1;
        }
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.below += other.below;
        self.above += other.above;
    }
}

/// Default speed bins in m/s.
pub fn default_speed_edges() -> Vec<f64> {
    vec![0.0, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityStats {
    pub per_track: Vec<f64>,
    pub histogram: Histogram,
}

pub fn velocity_stats(record: &GroundTruthRecord, fps: f64, edges: Vec<f64>) -> Result<VelocityStats, FilterError> {
    if !(fps > 0.0) {
        return Err(FilterError::InvalidConfig(format!("fps {fps}")));
    }
    let mut histogram = Histogram::new(edges)?;
    let per_track: Vec<f64> = record.tracks.iter_tracks().map(|t| mean_speed(t, fps)).collect();
    per_track.iter().for_each(|&v| histogram.add(v));
    Ok(VelocityStats { per_track, histogram })
}

/// Summary of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordStats {
    pub video_id: String,
    pub source: SourceTag,
    pub num_tracks: usize,
    pub num_frames: usize,
    pub static_tracks: usize,
    pub visible_fraction: f64,
    pub mean_speed: f64,
    pub speed_histogram: Histogram,
}

pub fn record_stats(record: &GroundTruthRecord, cfg: &FilterConfig, edges: Vec<f64>) -> Result<RecordStats, FilterError> {
    let velocity = velocity_stats(record, record.fps, edges)?;
    let static_tracks = record
        .tracks
        .iter_tracks()
        .filter(|t| static_track_detector(t, cfg.static_epsilon))
        .count();
    let n = record.tracks.points().len().max(1) as f64;
    Ok(RecordStats {
        video_id: record.video_id.clone(),
        source: record.source,
        num_tracks: record.num_tracks(),
        num_frames: record.num_frames(),
        static_tracks,
        visible_fraction: record.visibility.count_visible() as f64 / n,
        mean_speed: velocity.per_track.iter().sum::<f64>() / velocity.per_track.len().max(1) as f64,
        speed_histogram: velocity.histogram,
    })
}

/// Why a track was removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Flicker,
    OffMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub video_id: String,
    pub config: FilterConfig,
    pub kept: usize,
    pub dropped: Vec<(usize, DropReason)>,
}

/// Runs the flicker filter and, when masks are given, the mask-containment
/// filter; returns the surviving tracks.
pub fn apply_filters(
    record: &GroundTruthRecord,
    masks: Option<&[MaskMap]>,
    cfg: &FilterConfig,
) -> Result<(GroundTruthRecord, FilterReport), FilterError> {
    cfg.check()?;
    let flicker = flicker_filter(&record.visibility, cfg);
    let on_mask = match masks {
        Some(m) => mask_containment_filter(&record.to_2d(), m, cfg)?,
        None => vec![true; record.num_tracks()],
    };
    let mut dropped = Vec::new();
    let keep: Vec<bool> = flicker
        .iter()
        .zip(&on_mask)
        .enumerate()
        .map(|(i, (&f, &m))| {
            if !f {
                dropped.push((i, DropReason::Flicker));
            } else if !m {
                dropped.push((i, DropReason::OffMask));
            }
            f && m
        })
        .collect();
    let filtered = record.select_tracks(&keep);
    let report = FilterReport {
        video_id: record.video_id.clone(),
        config: *cfg,
        kept: filtered.num_tracks(),
        dropped,
    };
    Ok((filtered, report))
}
