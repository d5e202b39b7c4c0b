//! Ground-truth derivation from depth, segmentation and rigid poses.
//!
//! Pose arguments follow the dataset convention: `cam_pose` maps world
//! coordinates into the camera frame and `obj_pose` maps world coordinates
//! into the object frame.
//!
//! Raster maps put pixel `(col, row)` at image coordinates `(col, row)`; a
//! continuous position samples the nearest pixel, so the map covers
//! `[-0.5, width - 0.5) × [-0.5, height - 0.5)`.

pub mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, Point2, Point3, Pose};
use crate::trackset::{GroundTruthRecord, PredictionRecord, Query, SourceTag, Tracks3, Visibility};

pub use synth::{synth_scene, ObjectSpec, Primitive, SceneOutput, SceneSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("no valid depth at query pixel ({x}, {y})")]
    InvalidDepthAtQuery { x: f64, y: f64 },
    #[error("query pixel belongs to object {found:?}, expected {expected}")]
    ObjectIdMismatch { expected: u32, found: Option<u32> },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no Gaussian centers supplied")]
    NoCenters,
    #[error("nearest center projects behind the camera")]
    CenterBehindCamera,
    #[error("degenerate scene: {0}")]
    DegenerateSpec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn nearest_pixel(width: u32, height: u32, p: &Point2) -> Option<usize> {
    let col = (p.x + 0.5).floor();
    let row = (p.y + 0.5).floor();
    if col >= 0.0 && row >= 0.0 && col < width as f64 && row < height as f64 {
        Some(row as usize * width as usize + col as usize)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSampling {
    #[default]
    Nearest,
    Bilinear,
}

/// Per-pixel z-depth in meters. Non-finite or non-positive entries are
/// invalid (no surface observed).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self, AnnotationError> {
        if values.len() != width as usize * height as usize {
            return Err(AnnotationError::DimensionMismatch(format!(
                "depth map {width}x{height} has {} values",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn valid(d: f64) -> Option<f64> {
        (d.is_finite() && d > 0.0).then_some(d)
    }

    pub fn at(&self, col: u32, row: u32) -> Option<f64> {
        Self::valid(self.values[row as usize * self.width as usize + col as usize])
    }

    pub fn sample(&self, p: &Point2, sampling: DepthSampling) -> Option<f64> {
        match sampling {
            DepthSampling::Nearest => {
                nearest_pixel(self.width, self.height, p).and_then(|i| Self::valid(self.values[i]))
            }
            DepthSampling::Bilinear => {
                nearest_pixel(self.width, self.height, p)?;
                let x = p.x.clamp(0.0, (self.width - 1) as f64);
                let y = p.y.clamp(0.0, (self.height - 1) as f64);
                let (x0, y0) = (x.floor() as u32, y.floor() as u32);
                let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
                let (fx, fy) = (x - x0 as f64, y - y0 as f64);
                let d00 = self.at(x0, y0)?;
                let d10 = self.at(x1, y0)?;
                let d01 = self.at(x0, y1)?;
                let d11 = self.at(x1, y1)?;
                let top = d00 * (1.0 - fx) + d10 * fx;
                let bottom = d01 * (1.0 - fx) + d11 * fx;
                Some(top * (1.0 - fy) + bottom * fy)
            }
        }
    }
}

/// Integer label image: object ids for segmentation, nonzero for binary masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMap {
    width: u32,
    height: u32,
    labels: Vec<u32>,
}

impl MaskMap {
    pub fn new(width: u32, height: u32, labels: Vec<u32>) -> Result<Self, AnnotationError> {
        if labels.len() != width as usize * height as usize {
            return Err(AnnotationError::DimensionMismatch(format!(
                "mask {width}x{height} has {} values",
                labels.len()
            )));
        }
        Ok(Self { width, height, labels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_at(&self, p: &Point2) -> Option<u32> {
        nearest_pixel(self.width, self.height, p).map(|i| self.labels[i])
    }

    /// Whether the mask is set at `p`; positions outside the image are unset.
    pub fn is_set(&self, p: &Point2) -> bool {
        self.label_at(p).is_some_and(|l| l != 0)
    }
}

/// Anything that reports the observed z-depth along the ray through a pixel.
pub trait DepthSource {
    fn num_frames(&self) -> usize;
    fn image_size(&self) -> (u32, u32);
    /// Observed depth at `pixel` of `frame`, `None` outside the image or where
    /// no surface was observed.
    fn depth(&self, frame: usize, pixel: &Point2) -> Option<f64>;
}

/// A stack of raster depth maps, one per frame.
#[derive(Debug, Clone, Copy)]
pub struct DepthStack<'a> {
    pub maps: &'a [DepthMap],
    pub sampling: DepthSampling,
}

impl DepthSource for DepthStack<'_> {
    fn num_frames(&self) -> usize {
        self.maps.len()
    }

    fn image_size(&self) -> (u32, u32) {
        self.maps.first().map_or((0, 0), |m| (m.width, m.height))
    }

    fn depth(&self, frame: usize, pixel: &Point2) -> Option<f64> {
        self.maps[frame].sample(pixel, self.sampling)
    }
}

/// Depth-consistency test used to decide visibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum MarginRule {
    /// Visible iff `|z - D| < delta` (meters).
    Absolute { delta: f64 },
    /// One-sided: occluded iff `z - D > fraction * D`.
    /// Two-sided: visible iff `|z - D| < fraction * D`.
    Relative { fraction: f64, one_sided: bool },
}

impl MarginRule {
    /// Default rule for a data source: one-sided 5% for road scenes, two-sided
    /// 5% elsewhere.
    pub fn default_for(source: SourceTag) -> Self {
        match source {
            SourceTag::DriveTrack => MarginRule::Relative {
                fraction: 0.05,
                one_sided: true,
            },
            SourceTag::Synthetic => MarginRule::Absolute { delta: 1e-6 },
            SourceTag::Adt | SourceTag::PStudio => MarginRule::Relative {
                fraction: 0.05,
                one_sided: false,
            },
        }
    }

    pub fn consistent(&self, point_z: f64, map_depth: f64) -> bool {
        match *self {
            MarginRule::Absolute { delta } => (point_z - map_depth).abs() < delta,
            MarginRule::Relative { fraction, one_sided: true } => point_z - map_depth <= fraction * map_depth,
            MarginRule::Relative { fraction, one_sided: false } => {
                (point_z - map_depth).abs() < fraction * map_depth
            }
        }
    }
}

/// Per-frame visibility of a camera-frame track: the point must project into
/// the image in front of the camera, agree with the observed depth, and (when
/// masks are supplied) fall outside the occluder mask.
pub fn compute_visibility(
    track: &[Point3],
    depth: &impl DepthSource,
    occluder_masks: Option<&[MaskMap]>,
    intrinsics: &CameraIntrinsics,
    rule: MarginRule,
) -> Result<Vec<bool>, AnnotationError> {
    if depth.num_frames() != track.len() {
        return Err(AnnotationError::DimensionMismatch(format!(
            "{} depth frames for a {}-frame track",
            depth.num_frames(),
            track.len()
        )));
    }
    if let Some(masks) = occluder_masks {
        if masks.len() != track.len() {
            return Err(AnnotationError::DimensionMismatch(format!(
                "{} masks for a {}-frame track",
                masks.len(),
                track.len()
            )));
        }
        let size = depth.image_size();
        if let Some(m) = masks.iter().find(|m| (m.width, m.height) != size) {
            return Err(AnnotationError::DimensionMismatch(format!(
                "mask {}x{} vs depth {}x{}",
                m.width, m.height, size.0, size.1
            )));
        }
    }
    Ok(track
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let Some(pixel) = intrinsics.try_project(p) else {
                return false;
            };
            let Some(d) = depth.depth(t, &pixel) else {
                return false;
            };
            let on_mask = occluder_masks.is_some_and(|m| m[t].is_set(&pixel));
            rule.consistent(p.z, d) && !on_mask
        })
        .collect())
}

/// Expresses the query's surface point in the frame of the object it lies on.
#[allow(clippy::too_many_arguments)]
pub fn fix_query_to_object(
    query: &Query,
    depth: &DepthMap,
    segmentation: &MaskMap,
    object_id: u32,
    cam_pose: &Pose,
    obj_pose: &Pose,
    intrinsics: &CameraIntrinsics,
) -> Result<Point3, AnnotationError> {
    let pixel = query.pixel();
    let d = depth
        .sample(&pixel, DepthSampling::Nearest)
        .ok_or(AnnotationError::InvalidDepthAtQuery { x: query.x, y: query.y })?;
    let found = segmentation.label_at(&pixel);
    if found != Some(object_id) {
        return Err(AnnotationError::ObjectIdMismatch {
            expected: object_id,
            found,
        });
    }
    let q_cam = intrinsics.unproject(&pixel, d)?;
    Ok(object_point_from_camera(&q_cam, cam_pose, obj_pose))
}

/// `Q_obj = P^w_obj · (P^w_cam)^-1 · Q_cam`.
pub fn object_point_from_camera(q_cam: &Point3, cam_pose: &Pose, obj_pose: &Pose) -> Point3 {
    obj_pose.compose(&cam_pose.inverse()).apply(q_cam)
}

/// Camera-frame trajectory of a point rigidly attached to an object:
/// `Q_cam(t) = P^w_cam(t) · (P^w_obj(t))^-1 · Q_obj`.
pub fn derive_rigid_track(
    q_obj: &Point3,
    obj_poses: &[Pose],
    cam_poses: &[Pose],
) -> Result<Vec<Point3>, AnnotationError> {
    if obj_poses.len() != cam_poses.len() {
        return Err(AnnotationError::DimensionMismatch(format!(
            "{} object poses vs {} camera poses",
            obj_poses.len(),
            cam_poses.len()
        )));
    }
    Ok(obj_poses
        .iter()
        .zip(cam_poses)
        .map(|(obj, cam)| cam.compose(&obj.inverse()).apply(q_obj))
        .collect())
}

/// Result of snapping a query to its nearest moving Gaussian center.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestCenterTrack {
    pub index: usize,
    pub snapped_query: Point2,
    pub track: Vec<Point3>,
}

/// Picks the center closest (in the camera frame at the query frame) to the
/// unprojected query, snaps the query onto its projection, and follows it.
///
/// `centers[t][i]` is the world position of center `i` at frame `t`.
pub fn gaussian_nearest_track(
    query: &Query,
    depth: &DepthMap,
    centers: &[Vec<Point3>],
    cam_poses: &[Pose],
    intrinsics: &CameraIntrinsics,
) -> Result<NearestCenterTrack, AnnotationError> {
    if centers.len() != cam_poses.len() {
        return Err(AnnotationError::DimensionMismatch(format!(
            "{} center frames vs {} camera poses",
            centers.len(),
            cam_poses.len()
        )));
    }
    let t_q = query.frame;
    let at_query = centers.get(t_q).ok_or_else(|| {
        AnnotationError::DimensionMismatch(format!("query frame {t_q} beyond {} frames", centers.len()))
    })?;
    if at_query.is_empty() {
        return Err(AnnotationError::NoCenters);
    }
    let pixel = query.pixel();
    let d = depth
        .sample(&pixel, DepthSampling::Nearest)
        .ok_or(AnnotationError::InvalidDepthAtQuery { x: query.x, y: query.y })?;
    let q_cam = intrinsics.unproject(&pixel, d)?;
    let cam = &cam_poses[t_q];
    let index = at_query
        .iter()
        .map(|mu| (cam.apply(mu) - q_cam).norm_squared())
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or(AnnotationError::NoCenters)?;
    let snapped_query = intrinsics
        .try_project(&cam.apply(&at_query[index]))
        .ok_or(AnnotationError::CenterBehindCamera)?;
    let track = centers
        .iter()
        .zip(cam_poses)
        .map(|(frame, pose)| {
            frame.get(index).map(|mu| pose.apply(mu)).ok_or_else(|| {
                AnnotationError::DimensionMismatch(format!("center {index} missing in a frame"))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NearestCenterTrack {
        index,
        snapped_query,
        track,
    })
}

/// Holds every query's unprojected point fixed in the camera frame, using the
/// ground-truth depth at the query frame, and predicts it always visible.
pub fn static_baseline(gt: &GroundTruthRecord) -> Result<PredictionRecord, AnnotationError> {
    let t_count = gt.num_frames();
    let tracks = gt
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let z_q = gt.tracks.get(i, q.frame).z;
            let p = gt.intrinsics.unproject(&q.pixel(), z_q)?;
            Ok(vec![p; t_count])
        })
        .collect::<Result<Vec<_>, AnnotationError>>()?;
    let tracks = Tracks3::from_tracks(tracks)
        .map_err(|e| AnnotationError::DimensionMismatch(e.to_string()))?;
    let visibility = Visibility::filled(gt.num_tracks(), t_count, true);
    PredictionRecord::new(tracks, visibility).map_err(|e| AnnotationError::DimensionMismatch(e.to_string()))
}
