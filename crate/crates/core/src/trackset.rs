//! Ground-truth and predicted trajectory sets.
//!
//! On disk tracks are stored frame-major (`[T, Q, 3]`) while visibility is
//! track-major (`[Q, T]`). In memory both are track-major: sample `(q, t)`
//! lives at index `q * T + t`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Point2, Point3};

/// Data source a video was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SourceTag {
    #[serde(rename = "ADT")]
    Adt,
    DriveTrack,
    PStudio,
    Synthetic,
}

impl SourceTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceTag::Adt => "ADT",
            SourceTag::DriveTrack => "DriveTrack",
            SourceTag::PStudio => "PStudio",
            SourceTag::Synthetic => "Synthetic",
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Floating point width used when the record is written back to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FloatWidth {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("{field}: expected {expected} values, found {found}")]
    ShapeMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("prediction shape {found:?} does not match ground truth {expected:?}")]
    IncompatiblePrediction {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("prediction contains a non-finite value at track {track}, frame {frame}")]
    NonFinitePrediction { track: usize, frame: usize },
    #[error("track index {0} out of range")]
    TrackOutOfRange(usize),
}

/// Q trajectories of T camera-frame points each.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracks3 {
    num_tracks: usize,
    num_frames: usize,
    points: Vec<Point3>,
}

impl Tracks3 {
    pub fn new(num_tracks: usize, num_frames: usize, points: Vec<Point3>) -> Result<Self, TrackError> {
        if points.len() != num_tracks * num_frames {
            return Err(TrackError::ShapeMismatch {
                field: "tracks_xyz",
                expected: num_tracks * num_frames,
                found: points.len(),
            });
        }
        Ok(Self {
            num_tracks,
            num_frames,
            points,
        })
    }

    pub fn from_tracks(tracks: Vec<Vec<Point3>>) -> Result<Self, TrackError> {
        let num_tracks = tracks.len();
        let num_frames = tracks.first().map_or(0, Vec::len);
        let mut points = Vec::with_capacity(num_tracks * num_frames);
        for track in tracks {
            if track.len() != num_frames {
                return Err(TrackError::ShapeMismatch {
                    field: "tracks_xyz",
                    expected: num_frames,
                    found: track.len(),
                });
            }
            points.extend(track);
        }
        Ok(Self {
            num_tracks,
            num_frames,
            points,
        })
    }

    /// Builds from a flat `[T, Q, 3]` row-major buffer.
    pub fn from_frame_major(num_frames: usize, num_tracks: usize, values: &[f64]) -> Result<Self, TrackError> {
        let expected = num_frames * num_tracks * 3;
        if values.len() != expected {
            return Err(TrackError::ShapeMismatch {
                field: "tracks_xyz",
                expected,
                found: values.len(),
            });
        }
        let mut points = vec![Point3::origin(); num_tracks * num_frames];
        for t in 0..num_frames {
            for q in 0..num_tracks {
                let o = (t * num_tracks + q) * 3;
                points[q * num_frames + t] = Point3::new(values[o], values[o + 1], values[o + 2]);
            }
        }
        Ok(Self {
            num_tracks,
            num_frames,
            points,
        })
    }

    /// Flattens to `[T, Q, 3]` row-major order.
    pub fn to_frame_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len() * 3);
        for t in 0..self.num_frames {
            for q in 0..self.num_tracks {
                out.extend_from_slice(self.get(q, t).coords.as_slice());
            }
        }
        out
    }

    pub fn num_tracks(&self) -> usize {
        self.num_tracks
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn get(&self, track: usize, frame: usize) -> &Point3 {
        &self.points[track * self.num_frames + frame]
    }

    pub fn get_mut(&mut self, track: usize, frame: usize) -> &mut Point3 {
        &mut self.points[track * self.num_frames + frame]
    }

    pub fn track(&self, track: usize) -> &[Point3] {
        &self.points[track * self.num_frames..(track + 1) * self.num_frames]
    }

    pub fn track_mut(&mut self, track: usize) -> &mut [Point3] {
        &mut self.points[track * self.num_frames..(track + 1) * self.num_frames]
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [Point3] {
        &mut self.points
    }

    pub fn iter_tracks(&self) -> impl Iterator<Item = &[Point3]> {
        self.points.chunks(self.num_frames.max(1)).take(self.num_tracks)
    }

    pub fn scaled(&self, factor: f64) -> Tracks3 {
        Tracks3 {
            num_tracks: self.num_tracks,
            num_frames: self.num_frames,
            points: self.points.iter().map(|p| p * factor).collect(),
        }
    }

    /// Keeps the tracks whose flag is set, preserving order.
    pub fn select(&self, keep: &[bool]) -> Tracks3 {
        let points = self
            .iter_tracks()
            .zip(keep)
            .filter(|(_, &k)| k)
            .flat_map(|(track, _)| track.iter().copied())
            .collect::<Vec<_>>();
        Tracks3 {
            num_tracks: keep.iter().filter(|&&k| k).count(),
            num_frames: self.num_frames,
            points,
        }
    }
}

/// Binary per-sample visibility, track-major (`[Q, T]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visibility {
    num_tracks: usize,
    num_frames: usize,
    flags: Vec<bool>,
}

impl Visibility {
    pub fn new(num_tracks: usize, num_frames: usize, flags: Vec<bool>) -> Result<Self, TrackError> {
        if flags.len() != num_tracks * num_frames {
            return Err(TrackError::ShapeMismatch {
                field: "visibility",
                expected: num_tracks * num_frames,
                found: flags.len(),
            });
        }
        Ok(Self {
            num_tracks,
            num_frames,
            flags,
        })
    }

    pub fn filled(num_tracks: usize, num_frames: usize, value: bool) -> Self {
        Self {
            num_tracks,
            num_frames,
            flags: vec![value; num_tracks * num_frames],
        }
    }

    pub fn from_tracks(tracks: Vec<Vec<bool>>) -> Result<Self, TrackError> {
        let num_tracks = tracks.len();
        let num_frames = tracks.first().map_or(0, Vec::len);
        if let Some(bad) = tracks.iter().find(|t| t.len() != num_frames) {
            return Err(TrackError::ShapeMismatch {
                field: "visibility",
                expected: num_frames,
                found: bad.len(),
            });
        }
        Ok(Self {
            num_tracks,
            num_frames,
            flags: tracks.into_iter().flatten().collect(),
        })
    }

    pub fn num_tracks(&self) -> usize {
        self.num_tracks
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn get(&self, track: usize, frame: usize) -> bool {
        self.flags[track * self.num_frames + frame]
    }

    pub fn set(&mut self, track: usize, frame: usize, value: bool) {
        self.flags[track * self.num_frames + frame] = value;
    }

    pub fn track(&self, track: usize) -> &[bool] {
        &self.flags[track * self.num_frames..(track + 1) * self.num_frames]
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn iter_tracks(&self) -> impl Iterator<Item = &[bool]> {
        self.flags.chunks(self.num_frames.max(1)).take(self.num_tracks)
    }

    pub fn count_visible(&self) -> usize {
        self.flags.iter().filter(|&&v| v).count()
    }

    pub fn select(&self, keep: &[bool]) -> Visibility {
        let flags = self
            .iter_tracks()
            .zip(keep)
            .filter(|(_, &k)| k)
            .flat_map(|(track, _)| track.iter().copied())
            .collect::<Vec<_>>();
        Visibility {
            num_tracks: keep.iter().filter(|&&k| k).count(),
            num_frames: self.num_frames,
            flags,
        }
    }
}

/// Query point: pixel position at the frame where the track is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub x: f64,
    pub y: f64,
    pub frame: usize,
}

impl Query {
    pub fn pixel(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// One video's ground-truth annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub video_id: String,
    pub source: SourceTag,
    pub fps: f64,
    pub intrinsics: CameraIntrinsics,
    /// `(width, height)` in pixels, when known.
    pub image_size: Option<(u32, u32)>,
    pub tracks: Tracks3,
    pub visibility: Visibility,
    pub queries: Vec<Query>,
    pub storage: FloatWidth,
}

/// A rule broken by a [`GroundTruthRecord`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "rule")]
pub enum Violation {
    NoTracks,
    TooFewFrames { frames: usize },
    ShapeMismatch { field: String, expected: usize, found: usize },
    InvalidIntrinsics,
    InvalidFps { fps: f64 },
    QueryFrameOutOfRange { track: usize, frame: usize },
    NonFiniteQuery { track: usize },
    QueryNotVisible { track: usize },
    NonFinite { track: usize, frame: usize },
    VisibleBehindCamera { track: usize, frame: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoTracks => write!(f, "record has no tracks"),
            Violation::TooFewFrames { frames } => write!(f, "record has {frames} frame(s), at least 2 required"),
            Violation::ShapeMismatch { field, expected, found } => {
                write!(f, "{field}: expected {expected} entries, found {found}")
            }
            Violation::InvalidIntrinsics => write!(f, "camera intrinsics are invalid"),
            Violation::InvalidFps { fps } => write!(f, "fps {fps} is not positive"),
            Violation::QueryFrameOutOfRange { track, frame } => {
                write!(f, "track {track}: query frame {frame} out of range")
            }
            Violation::NonFiniteQuery { track } => write!(f, "track {track}: query is not finite"),
            Violation::QueryNotVisible { track } => {
                write!(f, "track {track}: not visible at its query frame")
            }
            Violation::NonFinite { track, frame } => {
                write!(f, "track {track}, frame {frame}: non-finite coordinate")
            }
            Violation::VisibleBehindCamera { track, frame } => {
                write!(f, "track {track}, frame {frame}: visible with non-positive depth")
            }
        }
    }
}

impl GroundTruthRecord {
    pub fn num_tracks(&self) -> usize {
        self.tracks.num_tracks()
    }

    pub fn num_frames(&self) -> usize {
        self.tracks.num_frames()
    }

    /// Lists every broken invariant; empty when the record is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (q_count, t_count) = (self.tracks.num_tracks(), self.tracks.num_frames());
        if q_count == 0 {
            out.push(Violation::NoTracks);
        }
        if t_count < 2 {
            out.push(Violation::TooFewFrames { frames: t_count });
        }
        if self.intrinsics.check().is_err() {
            out.push(Violation::InvalidIntrinsics);
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            out.push(Violation::InvalidFps { fps: self.fps });
        }
        let shape_ok = self.visibility.num_tracks() == q_count
            && self.visibility.num_frames() == t_count;
        if !shape_ok {
            out.push(Violation::ShapeMismatch {
                field: "visibility".into(),
                expected: q_count * t_count,
                found: self.visibility.flags().len(),
            });
        }
        if self.queries.len() != q_count {
            out.push(Violation::ShapeMismatch {
                field: "query_xyt".into(),
                expected: q_count,
                found: self.queries.len(),
            });
        }
        for (i, query) in self.queries.iter().enumerate() {
            if !(query.x.is_finite() && query.y.is_finite()) {
                out.push(Violation::NonFiniteQuery { track: i });
            }
            if query.frame >= t_count {
                out.push(Violation::QueryFrameOutOfRange {
                    track: i,
                    frame: query.frame,
                });
            } else if shape_ok && i < q_count && !self.visibility.get(i, query.frame) {
                out.push(Violation::QueryNotVisible { track: i });
            }
        }
        for q in 0..q_count {
            for t in 0..t_count {
                let p = self.tracks.get(q, t);
                if !p.coords.iter().all(|c| c.is_finite()) {
                    out.push(Violation::NonFinite { track: q, frame: t });
                } else if shape_ok && self.visibility.get(q, t) && p.z <= 0.0 {
                    out.push(Violation::VisibleBehindCamera { track: q, frame: t });
                }
            }
        }
        out
    }

    pub fn to_2d(&self) -> TrackSet2D {
        TrackSet2D::project(&self.tracks, &self.visibility, &self.intrinsics)
    }

    /// Keeps the tracks whose flag is set.
    pub fn select_tracks(&self, keep: &[bool]) -> GroundTruthRecord {
        GroundTruthRecord {
            tracks: self.tracks.select(keep),
            visibility: self.visibility.select(keep),
            queries: self
                .queries
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(q, _)| *q)
                .collect(),
            ..self.clone()
        }
    }
}

/// A model's 3D tracks and binary visibility for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub tracks: Tracks3,
    pub visibility: Visibility,
}

impl PredictionRecord {
    pub fn new(tracks: Tracks3, visibility: Visibility) -> Result<Self, TrackError> {
        if tracks.num_tracks() != visibility.num_tracks() || tracks.num_frames() != visibility.num_frames() {
            return Err(TrackError::IncompatiblePrediction {
                expected: (tracks.num_tracks(), tracks.num_frames()),
                found: (visibility.num_tracks(), visibility.num_frames()),
            });
        }
        Ok(Self { tracks, visibility })
    }

    /// Ground truth fed back as a prediction.
    pub fn perfect(gt: &GroundTruthRecord) -> Self {
        Self {
            tracks: gt.tracks.clone(),
            visibility: gt.visibility.clone(),
        }
    }

    pub fn check_compatible(&self, gt: &GroundTruthRecord) -> Result<(), TrackError> {
        let expected = (gt.num_tracks(), gt.num_frames());
        for found in [
            (self.tracks.num_tracks(), self.tracks.num_frames()),
            (self.visibility.num_tracks(), self.visibility.num_frames()),
        ] {
            if found != expected {
                return Err(TrackError::IncompatiblePrediction { expected, found });
            }
        }
        for q in 0..self.tracks.num_tracks() {
            for t in 0..self.tracks.num_frames() {
                if !self.tracks.get(q, t).coords.iter().all(|c| c.is_finite()) {
                    return Err(TrackError::NonFinitePrediction { track: q, frame: t });
                }
            }
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            tracks: self.tracks.scaled(factor),
            visibility: self.visibility.clone(),
        }
    }

    pub fn to_2d(&self, intrinsics: &CameraIntrinsics) -> TrackSet2D {
        TrackSet2D::project(&self.tracks, &self.visibility, intrinsics)
    }

    pub fn select_tracks(&self, keep: &[bool]) -> PredictionRecord {
        PredictionRecord {
            tracks: self.tracks.select(keep),
            visibility: self.visibility.select(keep),
        }
    }
}

/// Pixel trajectories. Samples with non-positive depth have no pixel (out of
/// frame); their visibility flag is carried through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet2D {
    num_tracks: usize,
    num_frames: usize,
    points: Vec<Option<Point2>>,
    visibility: Visibility,
}

impl TrackSet2D {
    pub fn project(tracks: &Tracks3, visibility: &Visibility, intrinsics: &CameraIntrinsics) -> Self {
        let points = tracks
            .points()
            .iter()
            .map(|p| intrinsics.try_project(p))
            .collect::<Vec<_>>();
        Self {
            num_tracks: tracks.num_tracks(),
            num_frames: tracks.num_frames(),
            points,
            visibility: visibility.clone(),
        }
    }

    pub fn from_parts(points: Vec<Vec<Option<Point2>>>, visibility: Visibility) -> Result<Self, TrackError> {
        let num_tracks = points.len();
        let num_frames = points.first().map_or(0, Vec::len);
        if visibility.num_tracks() != num_tracks || visibility.num_frames() != num_frames {
            return Err(TrackError::ShapeMismatch {
                field: "visibility",
                expected: num_tracks * num_frames,
                found: visibility.flags().len(),
            });
        }
        let flat: Vec<_> = points.into_iter().flatten().collect();
        if flat.len() != num_tracks * num_frames {
            return Err(TrackError::ShapeMismatch {
                field: "tracks_xy",
                expected: num_tracks * num_frames,
                found: flat.len(),
            });
        }
        Ok(Self {
            num_tracks,
            num_frames,
            points: flat,
            visibility,
        })
    }

    pub fn num_tracks(&self) -> usize {
        self.num_tracks
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn get(&self, track: usize, frame: usize) -> Option<Point2> {
        self.points[track * self.num_frames + frame]
    }

    pub fn visibility(&self) -> &Visibility {
        &self.visibility
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(tracks: Vec<Vec<Point3>>, vis: Vec<Vec<bool>>, queries: Vec<Query>) -> GroundTruthRecord {
        GroundTruthRecord {
            video_id: "v".into(),
            source: SourceTag::Synthetic,
            fps: 30.0,
            intrinsics: CameraIntrinsics::new(100.0, 100.0, 320.0, 240.0).unwrap(),
            image_size: Some((640, 480)),
            tracks: Tracks3::from_tracks(tracks).unwrap(),
            visibility: Visibility::from_tracks(vis).unwrap(),
            queries,
            storage: FloatWidth::F64,
        }
    }

    fn well_formed() -> GroundTruthRecord {
        let k = CameraIntrinsics::new(100.0, 100.0, 320.0, 240.0).unwrap();
        let tracks: Vec<Vec<Point3>> = (0..3)
            .map(|q| (0..5).map(|t| Point3::new(q as f64 * 0.1, t as f64 * 0.05, 2.0 + q as f64)).collect())
            .collect();
        let queries = tracks
            .iter()
            .map(|tr| {
                let px = k.project(&tr[1]).unwrap();
                Query { x: px.x, y: px.y, frame: 1 }
            })
            .collect();
        record(tracks, vec![vec![true; 5]; 3], queries)
    }

    #[test]
    fn validate_examples() {
        let rec = well_formed();
        assert!(rec.validate().is_empty());

        let mut occluded = rec.clone();
        occluded.visibility.set(2, 1, false);
        assert_eq!(occluded.validate(), vec![Violation::QueryNotVisible { track: 2 }]);

        let mut nan = rec.clone();
        nan.tracks.get_mut(0, 3).y = f64::NAN;
        assert_eq!(nan.validate(), vec![Violation::NonFinite { track: 0, frame: 3 }]);

        let mut behind = rec.clone();
        behind.tracks.get_mut(1, 4).z = -1.0;
        assert_eq!(behind.validate(), vec![Violation::VisibleBehindCamera { track: 1, frame: 4 }]);
        behind.visibility.set(1, 4, false);
        assert!(behind.validate().is_empty());

        let mut late = rec.clone();
        late.queries[0].frame = 5;
        assert_eq!(late.validate(), vec![Violation::QueryFrameOutOfRange { track: 0, frame: 5 }]);
    }

    #[test]
    fn validate_rejects_single_frame_and_empty() {
        let rec = record(
            vec![vec![Point3::new(0.0, 0.0, 1.0)]],
            vec![vec![true]],
            vec![Query { x: 320.0, y: 240.0, frame: 0 }],
        );
        assert_eq!(rec.validate(), vec![Violation::TooFewFrames { frames: 1 }]);
        let empty = record(vec![], vec![], vec![]);
        assert!(empty.validate().contains(&Violation::NoTracks));
    }

    #[test]
    fn validate_is_idempotent() {
        let mut rec = well_formed();
        rec.visibility.set(0, 1, false);
        rec.tracks.get_mut(2, 0).x = f64::INFINITY;
        assert_eq!(rec.validate(), rec.validate());
    }

    #[test]
    fn frame_major_round_trip() {
        let rec = well_formed();
        let flat = rec.tracks.to_frame_major();
        // first frame, second track
        assert_eq!(&flat[3..6], rec.tracks.get(1, 0).coords.as_slice());
        let back = Tracks3::from_frame_major(5, 3, &flat).unwrap();
        assert_eq!(back, rec.tracks);
        assert!(Tracks3::from_frame_major(5, 3, &flat[1..]).is_err());
    }

    #[test]
    fn to_2d_examples() {
        let rec = record(
            vec![vec![Point3::new(0.0, 0.0, 5.0), Point3::new(0.1, 0.0, -1.0)]],
            vec![vec![true, false]],
            vec![Query { x: 320.0, y: 240.0, frame: 0 }],
        );
        let set = rec.to_2d();
        assert_eq!(set.get(0, 0), Some(Point2::new(320.0, 240.0)));
        assert_eq!(set.get(0, 1), None);
    }

    #[test]
    fn to_2d_reproduces_queries() {
        let rec = well_formed();
        let set = rec.to_2d();
        for (i, q) in rec.queries.iter().enumerate() {
            let p = set.get(i, q.frame).unwrap();
            assert!((p - q.pixel()).norm() < 1e-6);
        }
    }

    #[test]
    fn select_tracks_keeps_order() {
        let rec = well_formed();
        let sub = rec.select_tracks(&[true, false, true]);
        assert_eq!(sub.num_tracks(), 2);
        assert_eq!(sub.tracks.track(1), rec.tracks.track(2));
        assert_eq!(sub.queries[1], rec.queries[2]);
        assert!(sub.validate().is_empty());
    }

    #[test]
    fn prediction_compatibility() {
        let rec = well_formed();
        let pred = PredictionRecord::perfect(&rec);
        assert!(pred.check_compatible(&rec).is_ok());
        let short = pred.select_tracks(&[true, true, false]);
        assert!(matches!(
            short.check_compatible(&rec),
            Err(TrackError::IncompatiblePrediction { .. })
        ));
        let mut bad = pred.clone();
        bad.tracks.get_mut(1, 2).z = f64::NAN;
        assert_eq!(
            bad.check_compatible(&rec),
            Err(TrackError::NonFinitePrediction { track: 1, frame: 2 })
        );
    }
}
