//! Pinhole camera model and SE(3) pose algebra.
//!
//! Every evaluation quantity lives in the camera frame. Poses follow the
//! convention that `Pose` named `a_to_b` maps coordinates expressed in frame
//! `a` into frame `b`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;
pub type Point2 = nalgebra::Point2<f64>;

/// Maximum deviation from orthonormality accepted as-is.
pub const ROTATION_TOLERANCE: f64 = 1e-9;
/// Rotations within this deviation are re-orthonormalized instead of rejected.
pub const REORTHONORMALIZE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point depth {z} is not positive")]
    NonPositiveDepth { z: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with det +1 (deviation {deviation:e})")]
    InvalidRotation { deviation: f64 },
    #[error("non-finite value in pose")]
    NonFinitePose,
}

/// Which focal length converts pixel thresholds into metric ones when
/// `fx != fy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocalRule {
    /// `sqrt(fx * fy)`
    #[default]
    GeometricMean,
    ArithmeticMean,
    Fx,
    Fy,
}

/// Pinhole intrinsics in pixels, stored on disk as `[fx, fy, cx, cy]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let intrinsics = Self { fx, fy, cx, cy };
        intrinsics.check()?;
        Ok(intrinsics)
    }

    pub fn from_array(values: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(values[0], values[1], values[2], values[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.fx, self.fy, self.cx, self.cy]
    }

    pub fn check(&self) -> Result<(), GeometryError> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(
                "non-finite component".into(),
            ));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn focal(&self, rule: FocalRule) -> f64 {
        match rule {
            FocalRule::GeometricMean => (self.fx * self.fy).sqrt(),
            FocalRule::ArithmeticMean => 0.5 * (self.fx + self.fy),
            FocalRule::Fx => self.fx,
            FocalRule::Fy => self.fy,
        }
    }

    /// Projects a camera-frame point onto the image plane.
    pub fn project(&self, p: &Point3) -> Result<Point2, GeometryError> {
        if !(p.z > 0.0) {
            return Err(GeometryError::NonPositiveDepth { z: p.z });
        }
        Ok(Point2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Like [`project`](Self::project) but maps points on or behind the
    /// camera plane to `None` (out of frame) instead of an error.
    pub fn try_project(&self, p: &Point3) -> Option<Point2> {
        self.project(p).ok()
    }

    /// Lifts pixel `q` to the camera-frame point at z-depth `depth`.
    pub fn unproject(&self, q: &Point2, depth: f64) -> Result<Point3, GeometryError> {
        if !(depth > 0.0) {
            return Err(GeometryError::NonPositiveDepth { z: depth });
        }
        Ok(Point3::new(
            (q.x - self.cx) / self.fx * depth,
            (q.y - self.cy) / self.fy * depth,
            depth,
        ))
    }
}

/// Metric correctness radius for a pixel threshold at the depth of `gt_point`.
pub fn delta3d_threshold(
    intrinsics: &CameraIntrinsics,
    gt_point: &Point3,
    delta_2d: f64,
    rule: FocalRule,
) -> Result<f64, GeometryError> {
    if !(gt_point.z > 0.0) {
        return Err(GeometryError::NonPositiveDepth { z: gt_point.z });
    }
    Ok(gt_point.z * delta_2d / intrinsics.focal(rule))
}

/// Rigid transform `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    /// Builds a pose, re-orthonormalizing rotations that are slightly off and
    /// rejecting those that are not rotations at all.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinitePose);
        }
        let deviation = rotation_deviation(&rotation);
        let rotation = if deviation <= ROTATION_TOLERANCE {
            rotation
        } else if deviation <= REORTHONORMALIZE_TOLERANCE {
            let fixed = Rotation3::from_matrix_eps(&rotation, 1e-15, 100, Rotation3::identity());
            *fixed.matrix()
        } else {
            return Err(GeometryError::InvalidRotation { deviation });
        };
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized),
    /// followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 || angle == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
        };
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }
}

fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = (r.determinant() - 1.0).abs();
    ortho.max(det)
}
