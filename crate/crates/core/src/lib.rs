//! Evaluation of 3D point trajectories against ground truth.
//!
//! The crate covers the whole pipeline: camera geometry, record validation,
//! scale alignment of monocular predictions, Jaccard-style scoring, the
//! annotation math used to derive ground truth from rigid poses and depth,
//! track filters, and the on-disk array format.

pub mod annotation;
pub mod evaluate;
pub mod filtering;
pub mod geometry;
pub mod metrics;
pub mod npy;
pub mod record;
pub mod rescaling;
pub mod trackset;

pub use geometry::{CameraIntrinsics, FocalRule, Point2, Point3, Pose};
pub use metrics::{JaccardCounts, ThresholdFamily, ThresholdScores};
pub use rescaling::RescaleMode;
pub use trackset::{GroundTruthRecord, PredictionRecord, SourceTag, TrackSet2D, Tracks3, Visibility};
