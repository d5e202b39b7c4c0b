//! Per-video record directories.
//!
//! A ground-truth record is a directory holding:
//!
//! ```text
//! manifest.json           {"video_id", "source", "fps", "image_size"?}
//! tracks_xyz.npy          [T, Q, 3]  float32 or float64, camera frame, meters
//! visibility.npy          [Q, T]     bool
//! query_xyt.npy           [Q, 3]     (x, y, frame)
//! camera_intrinsics.npy   [4]        (fx, fy, cx, cy)
//! ```
//!
//! A prediction directory holds `tracks_xyz.npy` and `visibility.npy` only.
//! Optional extras written by the synthetic generator are `depth.npy`
//! `[T, H, W]` and `segmentation.npy` `[T, H, W]`; the mask filter reads any
//! `[T, H, W]` integer or bool array, treating nonzero as on-mask.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{DepthMap, MaskMap};
use crate::geometry::CameraIntrinsics;
use crate::npy::{Dtype, NpyArray, NpyError};
use crate::trackset::{
    FloatWidth, GroundTruthRecord, PredictionRecord, Query, SourceTag, Tracks3, Violation, Visibility,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACKS_FILE: &str = "tracks_xyz.npy";
pub const VISIBILITY_FILE: &str = "visibility.npy";
pub const QUERY_FILE: &str = "query_xyt.npy";
pub const INTRINSICS_FILE: &str = "camera_intrinsics.npy";
pub const DEPTH_FILE: &str = "depth.npy";
pub const SEGMENTATION_FILE: &str = "segmentation.npy";

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{field}: {error}")]
    Array {
        field: &'static str,
        #[source]
        error: NpyError,
    },
    #[error("{field}: expected shape {expected}, found {found:?}")]
    ShapeMismatch {
        field: &'static str,
        expected: String,
        found: Vec<usize>,
    },
    #[error("query_xyt: track {track} has frame {value}, expected a non-negative integer")]
    InvalidQueryFrame { track: usize, value: f64 },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("record failed validation: {}", summarize(.0))]
    ValidationFailed(Vec<Violation>),
    #[error("{path}: {error}")]
    Io {
        path: PathBuf,
        #[source]
        error: io::Error,
    },
}

fn summarize(violations: &[Violation]) -> String {
    let shown: Vec<String> = violations.iter().take(3).map(|v| v.to_string()).collect();
    let more = violations.len().saturating_sub(3);
    if more > 0 {
        format!("{} (+{more} more)", shown.join("; "))
    } else {
        shown.join("; ")
    }
}

impl RecordError {
    /// Short machine-readable tag for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            RecordError::Array { error, .. } => match error {
                NpyError::BadMagic => "bad_magic",
                NpyError::UnsupportedVersion(..) => "unsupported_version",
                NpyError::UnsupportedDtype(_) | NpyError::WrongDtype { .. } => "unsupported_dtype",
                NpyError::MalformedHeader(_) => "malformed_header",
                NpyError::FortranOrder => "fortran_order",
                NpyError::Truncated { .. } => "truncated",
                NpyError::BadShape { .. } => "shape_mismatch",
                NpyError::Io(_) => "io",
            },
            RecordError::ShapeMismatch { .. } => "shape_mismatch",
            RecordError::InvalidQueryFrame { .. } => "invalid_query",
            RecordError::Manifest { .. } => "manifest",
            RecordError::ValidationFailed(_) => "validation_failed",
            RecordError::Io { .. } => "io",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    video_id: String,
    source: SourceTag,
    fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_size: Option<[u32; 2]>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RecordError + '_ {
    move |error| RecordError::Io {
        path: path.to_path_buf(),
        error,
    }
}

fn read_array(dir: &Path, file: &'static str) -> Result<NpyArray, RecordError> {
    NpyArray::read_file(dir.join(file)).map_err(|error| RecordError::Array { field: field_name(file), error })
}

fn write_array(dir: &Path, file: &'static str, array: &NpyArray) -> Result<(), RecordError> {
    let path = dir.join(file);
    fs::write(&path, array.to_bytes()).map_err(io_err(&path))
}

fn field_name(file: &'static str) -> &'static str {
    file.strip_suffix(".npy").unwrap_or(file)
}

fn expect_shape(array: &NpyArray, field: &'static str, expected: &[Option<usize>]) -> Result<(), RecordError> {
    let shape = array.shape();
    let ok = shape.len() == expected.len() && shape.iter().zip(expected).all(|(s, e)| e.map_or(true, |e| e == *s));
    if ok {
        return Ok(());
    }
    let dims: Vec<String> = expected
        .iter()
        .map(|e| e.map_or_else(|| "_".to_string(), |v| v.to_string()))
        .collect();
    Err(RecordError::ShapeMismatch {
        field,
        expected: format!("[{}]", dims.join(", ")),
        found: shape.to_vec(),
    })
}

fn float_array(width: FloatWidth, shape: Vec<usize>, values: &[f64]) -> NpyArray {
    match width {
        FloatWidth::F32 => NpyArray::from_f32(shape, values),
        FloatWidth::F64 => NpyArray::from_f64(shape, values),
    }
    .expect("shape matches value count")
}

fn width_of(array: &NpyArray) -> FloatWidth {
    match array.dtype() {
        Dtype::F4 => FloatWidth::F32,
        _ => FloatWidth::F64,
    }
}

/// Reads tracks `[T, Q, 3]` and visibility `[Q, T]` from a directory.
fn read_tracks(dir: &Path) -> Result<(Tracks3, Visibility, FloatWidth), RecordError> {
    let tracks = read_array(dir, TRACKS_FILE)?;
    expect_shape(&tracks, "tracks_xyz", &[None, None, Some(3)])?;
    let (t_count, q_count) = (tracks.shape()[0], tracks.shape()[1]);
    let visibility = read_array(dir, VISIBILITY_FILE)?;
    expect_shape(&visibility, "visibility", &[Some(q_count), Some(t_count)])?;
    let points = Tracks3::from_frame_major(t_count, q_count, &tracks.to_f64()).expect("shape checked");
    let vis = Visibility::new(q_count, t_count, visibility.to_bool()).expect("shape checked");
    Ok((points, vis, width_of(&tracks)))
}

/// Reads and validates a ground-truth record directory.
pub fn read_record(dir: impl AsRef<Path>) -> Result<GroundTruthRecord, RecordError> {
    let record = read_record_unchecked(dir)?;
    let violations = record.validate();
    if !violations.is_empty() {
        return Err(RecordError::ValidationFailed(violations));
    }
    Ok(record)
}

/// Reads a ground-truth record without running validation.
pub fn read_record_unchecked(dir: impl AsRef<Path>) -> Result<GroundTruthRecord, RecordError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| RecordError::Manifest {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;

    let (tracks, visibility, storage) = read_tracks(dir)?;
    let q_count = tracks.num_tracks();

    let queries = read_array(dir, QUERY_FILE)?;
    expect_shape(&queries, "query_xyt", &[Some(q_count), Some(3)])?;
    let queries = queries
        .to_f64()
        .chunks_exact(3)
        .enumerate()
        .map(|(track, c)| {
            let frame = c[2];
            if !(frame >= 0.0 && frame.fract() == 0.0 && frame < usize::MAX as f64) {
                return Err(RecordError::InvalidQueryFrame { track, value: frame });
            }
            Ok(Query {
                x: c[0],
                y: c[1],
                frame: frame as usize,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let intrinsics = read_array(dir, INTRINSICS_FILE)?;
    expect_shape(&intrinsics, "camera_intrinsics", &[Some(4)])?;
    let k = intrinsics.to_f64();

    Ok(GroundTruthRecord {
        video_id: manifest.video_id,
        source: manifest.source,
        fps: manifest.fps,
        intrinsics: CameraIntrinsics {
            fx: k[0],
            fy: k[1],
            cx: k[2],
            cy: k[3],
        },
        image_size: manifest.image_size.map(|[w, h]| (w, h)),
        tracks,
        visibility,
        queries,
        storage,
    })
}

/// Writes a validated record; refuses records that fail validation.
pub fn write_record(record: &GroundTruthRecord, dir: impl AsRef<Path>) -> Result<(), RecordError> {
    let violations = record.validate();
    if !violations.is_empty() {
        return Err(RecordError::ValidationFailed(violations));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let manifest = Manifest {
        video_id: record.video_id.clone(),
        source: record.source,
        fps: record.fps,
        image_size: record.image_size.map(|(w, h)| [w, h]),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;

    write_tracks(dir, &record.tracks, &record.visibility, record.storage)?;
    let q_count = record.num_tracks();
    let queries: Vec<f64> = record
        .queries
        .iter()
        .flat_map(|q| [q.x, q.y, q.frame as f64])
        .collect();
    write_array(dir, QUERY_FILE, &float_array(record.storage, vec![q_count, 3], &queries))?;
    write_array(
        dir,
        INTRINSICS_FILE,
        &float_array(record.storage, vec![4], &record.intrinsics.to_array()),
    )
}

fn write_tracks(dir: &Path, tracks: &Tracks3, visibility: &Visibility, width: FloatWidth) -> Result<(), RecordError> {
    let (q_count, t_count) = (tracks.num_tracks(), tracks.num_frames());
    write_array(
        dir,
        TRACKS_FILE,
        &float_array(width, vec![t_count, q_count, 3], &tracks.to_frame_major()),
    )?;
    write_array(
        dir,
        VISIBILITY_FILE,
        &NpyArray::from_bool(vec![q_count, t_count], visibility.flags()).expect("shape matches"),
    )
}

pub fn read_prediction(dir: impl AsRef<Path>) -> Result<PredictionRecord, RecordError> {
    let (tracks, visibility, _) = read_tracks(dir.as_ref())?;
    Ok(PredictionRecord { tracks, visibility })
}

pub fn write_prediction(pred: &PredictionRecord, dir: impl AsRef<Path>, width: FloatWidth) -> Result<(), RecordError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_tracks(dir, &pred.tracks, &pred.visibility, width)
}

/// Reads a `[T, H, W]` label stack. Float inputs become 0/1.
pub fn read_masks(path: impl AsRef<Path>) -> Result<Vec<MaskMap>, RecordError> {
    let path = path.as_ref();
    let array = NpyArray::read_file(path).map_err(|error| RecordError::Array { field: "masks", error })?;
    expect_shape(&array, "masks", &[None, None, None])?;
    let (t, h, w) = (array.shape()[0], array.shape()[1], array.shape()[2]);
    let labels: Vec<u32> = match array.dtype() {
        Dtype::U1 | Dtype::Bool => array.raw().iter().map(|&b| b as u32).collect(),
        Dtype::F4 | Dtype::F8 => array.to_f64().into_iter().map(|v| (v != 0.0) as u32).collect(),
    };
    Ok(labels
        .chunks_exact((h * w).max(1))
        .take(t)
        .map(|frame| MaskMap::new(w as u32, h as u32, frame.to_vec()).expect("sized by shape"))
        .collect())
}

/// Writes a `[T, H, W]` label stack as `u1`; labels must fit in a byte.
pub fn write_masks(masks: &[MaskMap], path: impl AsRef<Path>) -> Result<(), RecordError> {
    let path = path.as_ref();
    let (w, h) = masks.first().map_or((0, 0), |m| (m.width() as usize, m.height() as usize));
    let mut bytes = Vec::with_capacity(masks.len() * w * h);
    for m in masks {
        bytes.extend(m.labels().iter().map(|&l| l.min(u8::MAX as u32) as u8));
    }
    let array = NpyArray::from_u8(vec![masks.len(), h, w], bytes).map_err(|error| RecordError::Array {
        field: "masks",
        error,
    })?;
    fs::write(path, array.to_bytes()).map_err(io_err(path))
}

/// Writes a `[T, H, W]` float64 depth stack; invalid pixels become NaN.
pub fn write_depth(maps: &[DepthMap], path: impl AsRef<Path>) -> Result<(), RecordError> {
    let path = path.as_ref();
    let (w, h) = maps.first().map_or((0, 0), |m| (m.width() as usize, m.height() as usize));
    let values: Vec<f64> = maps.iter().flat_map(|m| m.values().iter().copied()).collect();
    let array = NpyArray::from_f64(vec![maps.len(), h, w], &values).map_err(|error| RecordError::Array {
        field: "depth",
        error,
    })?;
    fs::write(path, array.to_bytes()).map_err(io_err(path))
}

/// Record directories under `root`, sorted by name. `root` itself counts
/// when it holds a manifest.
pub fn list_record_dirs(root: impl AsRef<Path>) -> Result<Vec<PathBuf>, RecordError> {
    let root = root.as_ref();
    if root.join(MANIFEST_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let path = entry.map_err(io_err(root))?.path();
        if path.join(MANIFEST_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}
