//! Procedural scenes with closed-form depth, used as a ground-truth oracle.
//!
//! A scene is a camera and a handful of rigid primitives (spheres, boxes that
//! are axis-aligned in their own frame, planes), each moving with constant
//! linear and angular velocity. Depth is exact ray/primitive intersection, so
//! tracks and visibility carry no discretization error.
//!
//! Scene files are TOML:
//!
//! ```toml
//! seed = 7
//! frames = 48
//! tracks = 64
//! width = 320
//! height = 240
//!
//! [camera]
//! velocity = [0.01, 0.0, 0.0]
//!
//! [[objects]]
//! primitive = { kind = "sphere", radius = 0.5 }
//! position = [0.0, 0.0, 4.0]
//! velocity = [0.02, 0.0, 0.0]
//!
//! [[objects]]
//! primitive = { kind = "plane", normal = [0.0, -1.0, 0.0], offset = -1.0 }
//! ```

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    compute_visibility, derive_rigid_track, object_point_from_camera, AnnotationError, DepthMap, DepthSource,
    MarginRule, MaskMap,
};
use crate::geometry::{CameraIntrinsics, Point2, Pose};
use crate::trackset::{FloatWidth, GroundTruthRecord, Query, SourceTag, Tracks3, Visibility};

/// Visibility margin for exact geometry.
pub const SYNTHETIC_MARGIN: MarginRule = MarginRule::Absolute { delta: 1e-6 };
const MAX_QUERY_ATTEMPTS_PER_TRACK: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { radius: f64 },
    /// Box centered at the object origin, aligned with the object axes.
    Box { half_extents: [f64; 3] },
    /// Points `x` with `normal · x = offset` in the object frame.
    Plane { normal: [f64; 3], offset: f64 },
}

impl Primitive {
    /// Smallest ray parameter `s > 0` with `origin + s·dir` on the surface.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Primitive::Sphere { radius } => {
                let a = dir.norm_squared();
                let b = origin.dot(dir);
                let c = origin.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                [(-b - root) / a, (-b + root) / a].into_iter().find(|&s| s > 0.0)
            }
            Primitive::Box { half_extents } => {
                let mut near = f64::NEG_INFINITY;
                let mut far = f64::INFINITY;
                for axis in 0..3 {
                    let h = half_extents[axis];
                    if dir[axis] == 0.0 {
                        if origin[axis].abs() > h {
                            return None;
                        }
                        continue;
                    }
                    let a = (-h - origin[axis]) / dir[axis];
                    let b = (h - origin[axis]) / dir[axis];
                    near = near.max(a.min(b));
                    far = far.min(a.max(b));
                }
                if near > far || far <= 0.0 {
                    None
                } else if near > 0.0 {
                    Some(near)
                } else {
                    Some(far)
                }
            }
            Primitive::Plane { normal, offset } => {
                let n = Vector3::from(normal);
                let denom = n.dot(dir);
                if denom == 0.0 {
                    return None;
                }
                let s = (offset - n.dot(origin)) / denom;
                (s > 0.0).then_some(s)
            }
        }
    }
}

/// Constant-velocity rigid motion. At frame `t` the body-to-world transform
/// is a rotation of `angular_velocity · t` about `axis` followed by a
/// translation to `position + velocity · t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Motion {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub axis: [f64; 3],
    pub angular_velocity: f64,
}

impl Default for Motion {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            velocity: [0.0; 3],
            axis: [0.0, 1.0, 0.0],
            angular_velocity: 0.0,
        }
    }
}

impl Motion {
    pub fn body_to_world(&self, frame: usize) -> Pose {
        let t = frame as f64;
        let translation = Vector3::from(self.position) + Vector3::from(self.velocity) * t;
        Pose::from_axis_angle(Vector3::from(self.axis), self.angular_velocity * t, translation)
    }

    pub fn is_static(&self) -> bool {
        self.velocity == [0.0; 3] && self.angular_velocity == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub primitive: Primitive,
    #[serde(flatten)]
    pub motion: Motion,
}

fn default_fps() -> f64 {
    30.0
}

fn default_source() -> SourceTag {
    SourceTag::Synthetic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    pub frames: usize,
    pub tracks: usize,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_source")]
    pub source: SourceTag,
    /// Defaults to `fx = fy = width`, principal point at the image center.
    #[serde(default)]
    pub intrinsics: Option<CameraIntrinsics>,
    #[serde(default)]
    pub camera: Motion,
    pub objects: Vec<ObjectSpec>,
}

/// Generated ground truth plus optional rendered maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneOutput {
    pub record: GroundTruthRecord,
    pub depth: Vec<DepthMap>,
    /// Object labels (`index + 1`, `0` for background).
    pub segmentation: Vec<MaskMap>,
}

/// Nearest hit along a camera ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub depth: f64,
    pub object: usize,
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, AnnotationError> {
        toml::from_str(text).map_err(|e| AnnotationError::DegenerateSpec(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }

    pub fn video_id(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("synth-{:06}", self.seed))
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics, AnnotationError> {
        match self.intrinsics {
            Some(k) => {
                k.check()?;
                Ok(k)
            }
            None => Ok(CameraIntrinsics::new(
                self.width as f64,
                self.width as f64,
                0.5 * (self.width as f64 - 1.0),
                0.5 * (self.height as f64 - 1.0),
            )?),
        }
    }

    fn check(&self) -> Result<(), AnnotationError> {
        if self.objects.is_empty() {
            return Err(AnnotationError::DegenerateSpec("scene has no objects".into()));
        }
        if self.frames < 2 {
            return Err(AnnotationError::DegenerateSpec(format!("{} frame(s), need at least 2", self.frames)));
        }
        if self.tracks == 0 {
            return Err(AnnotationError::DegenerateSpec("zero tracks requested".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(AnnotationError::DegenerateSpec("empty image".into()));
        }
        if !(self.fps > 0.0) {
            return Err(AnnotationError::DegenerateSpec("fps must be positive".into()));
        }
        Ok(())
    }

    /// World→camera pose per frame.
    pub fn camera_poses(&self) -> Vec<Pose> {
        (0..self.frames).map(|t| self.camera.body_to_world(t).inverse()).collect()
    }

    /// World→object pose per frame.
    pub fn object_poses(&self, object: usize) -> Vec<Pose> {
        let motion = self.objects[object].motion;
        (0..self.frames).map(|t| motion.body_to_world(t).inverse()).collect()
    }

    /// Whether nothing moves relative to the camera.
    pub fn is_static(&self) -> bool {
        self.camera.is_static() && self.objects.iter().all(|o| o.motion.is_static())
    }

    /// A random scene in front of the camera: a ground plane, a back wall and
    /// a few spheres and boxes. With `moving`, objects and camera get random
    /// velocities.
    pub fn random(seed: u64, frames: usize, tracks: usize, moving: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
        let mut objects = vec![
            ObjectSpec {
                primitive: Primitive::Plane { normal: [0.0, -1.0, 0.0], offset: -1.2 },
                motion: Motion::default(),
            },
            ObjectSpec {
                primitive: Primitive::Plane { normal: [0.0, 0.0, -1.0], offset: -9.0 },
                motion: Motion::default(),
            },
        ];
        let count = rng.gen_range(2..=4);
        for _ in 0..count {
            let primitive = if rng.gen_bool(0.5) {
                Primitive::Sphere { radius: rng.gen_range(0.2..0.7) }
            } else {
                Primitive::Box {
                    half_extents: [rng.gen_range(0.15..0.6), rng.gen_range(0.15..0.6), rng.gen_range(0.15..0.6)],
                }
            };
            let mut motion = Motion {
                position: [rng.gen_range(-1.5..1.5), rng.gen_range(-0.6..0.4), rng.gen_range(3.0..7.0)],
                axis: [rng.gen_range(-1.0..1.0), rng.gen_range(0.2..1.0), rng.gen_range(-1.0..1.0)],
                ..Motion::default()
            };
            if moving {
                motion.velocity = [rng.gen_range(-0.03..0.03), rng.gen_range(-0.01..0.01), rng.gen_range(-0.03..0.03)];
                motion.angular_velocity = rng.gen_range(-0.05..0.05);
            }
            objects.push(ObjectSpec { primitive, motion });
        }
        let mut camera = Motion::default();
        if moving {
            camera.velocity = [rng.gen_range(-0.01..0.01), rng.gen_range(-0.005..0.005), rng.gen_range(-0.01..0.01)];
            camera.angular_velocity = rng.gen_range(-0.004..0.004);
        }
        Self {
            name: None,
            seed,
            frames,
            tracks,
            width: 256,
            height: 192,
            fps: 30.0,
            source: SourceTag::Synthetic,
            intrinsics: None,
            camera,
            objects,
        }
    }

    /// Generates the ground-truth record without rasterizing maps.
    pub fn generate(&self) -> Result<GroundTruthRecord, AnnotationError> {
        self.check()?;
        let scene = PosedScene::new(self)?;
        let intrinsics = scene.intrinsics;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let mut tracks = Vec::with_capacity(self.tracks);
        let mut visibility = Vec::with_capacity(self.tracks);
        let mut queries = Vec::with_capacity(self.tracks);
        let mut attempts = 0usize;
        while tracks.len() < self.tracks {
            attempts += 1;
            if attempts > MAX_QUERY_ATTEMPTS_PER_TRACK * self.tracks {
                return Err(AnnotationError::DegenerateSpec(
                    "objects cover too little of the image to place queries".into(),
                ));
            }
            let frame = rng.gen_range(0..self.frames);
            let col = rng.gen_range(0..self.width);
            let row = rng.gen_range(0..self.height);
            let pixel = Point2::new(col as f64, row as f64);
            let Some(hit) = scene.cast(frame, &pixel) else {
                continue;
            };
            let q_cam = intrinsics.unproject(&pixel, hit.depth)?;
            let q_obj = object_point_from_camera(&q_cam, &scene.cam_poses[frame], &scene.obj_poses[hit.object][frame]);
            let track = derive_rigid_track(&q_obj, &scene.obj_poses[hit.object], &scene.cam_poses)?;
            let vis = compute_visibility(&track, &scene, None, &intrinsics, SYNTHETIC_MARGIN)?;
            // grazing hits can fail the depth test at their own query frame
            if !vis[frame] {
                continue;
            }
            tracks.push(track);
            visibility.push(vis);
            queries.push(Query { x: pixel.x, y: pixel.y, frame });
        }
        let map_err = |e: crate::trackset::TrackError| AnnotationError::DimensionMismatch(e.to_string());
        Ok(GroundTruthRecord {
            video_id: self.video_id(),
            source: self.source,
            fps: self.fps,
            intrinsics,
            image_size: Some((self.width, self.height)),
            tracks: Tracks3::from_tracks(tracks).map_err(map_err)?,
            visibility: Visibility::from_tracks(visibility).map_err(map_err)?,
            queries,
            storage: FloatWidth::F64,
        })
    }

    /// Rasterizes depth and object labels for one frame at pixel centers.
    pub fn render(&self, frame: usize) -> Result<(DepthMap, MaskMap), AnnotationError> {
        let scene = PosedScene::new(self)?;
        Ok(scene.render(frame))
    }
}

/// A scene with its per-frame poses evaluated.
#[derive(Debug, Clone)]
pub struct PosedScene<'a> {
    spec: &'a SceneSpec,
    pub intrinsics: CameraIntrinsics,
    pub cam_poses: Vec<Pose>,
    pub obj_poses: Vec<Vec<Pose>>,
    /// camera→object per object per frame
    cam_to_obj: Vec<Vec<Pose>>,
}

impl<'a> PosedScene<'a> {
    pub fn new(spec: &'a SceneSpec) -> Result<Self, AnnotationError> {
        let intrinsics = spec.intrinsics()?;
        let cam_poses = spec.camera_poses();
        let obj_poses: Vec<Vec<Pose>> = (0..spec.objects.len()).map(|i| spec.object_poses(i)).collect();
        let cam_to_obj = obj_poses
            .iter()
            .map(|poses| {
                poses
                    .iter()
                    .zip(&cam_poses)
                    .map(|(obj, cam)| obj.compose(&cam.inverse()))
                    .collect()
            })
            .collect();
        Ok(Self {
            spec,
            intrinsics,
            cam_poses,
            obj_poses,
            cam_to_obj,
        })
    }

    /// Nearest surface along the ray through `pixel`; `depth` is camera z.
    pub fn cast(&self, frame: usize, pixel: &Point2) -> Option<Hit> {
        let k = &self.intrinsics;
        // z component 1, so the ray parameter equals z-depth
        let dir = Vector3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0);
        let mut best: Option<Hit> = None;
        for (object, spec) in self.spec.objects.iter().enumerate() {
            let pose = &self.cam_to_obj[object][frame];
            let origin = pose.translation();
            let d = pose.rotation() * dir;
            if let Some(s) = spec.primitive.intersect(origin, &d) {
                if best.map_or(true, |b| s < b.depth) {
                    best = Some(Hit { depth: s, object });
                }
            }
        }
        best
    }

    pub fn render(&self, frame: usize) -> (DepthMap, MaskMap) {
        let (w, h) = (self.spec.width, self.spec.height);
        let mut depth = Vec::with_capacity(w as usize * h as usize);
        let mut labels = Vec::with_capacity(w as usize * h as usize);
        for row in 0..h {
            for col in 0..w {
                match self.cast(frame, &Point2::new(col as f64, row as f64)) {
                    Some(hit) => {
                        depth.push(hit.depth);
                        labels.push(hit.object as u32 + 1);
                    }
                    None => {
                        depth.push(f64::INFINITY);
                        labels.push(0);
                    }
                }
            }
        }
        (
            DepthMap::new(w, h, depth).expect("sized"),
            MaskMap::new(w, h, labels).expect("sized"),
        )
    }
}

impl DepthSource for PosedScene<'_> {
    fn num_frames(&self) -> usize {
        self.spec.frames
    }

    fn image_size(&self) -> (u32, u32) {
        (self.spec.width, self.spec.height)
    }

    fn depth(&self, frame: usize, pixel: &Point2) -> Option<f64> {
        let (w, h) = (self.spec.width as f64, self.spec.height as f64);
        let inside = pixel.x >= -0.5 && pixel.y >= -0.5 && pixel.x < w - 0.5 && pixel.y < h - 0.5;
        if !inside {
            return None;
        }
        self.cast(frame, pixel).map(|hit| hit.depth)
    }
}

/// Generates the record along with exact depth and label maps for every frame.
pub fn synth_scene(spec: &SceneSpec) -> Result<SceneOutput, AnnotationError> {
    let record = spec.generate()?;
    let scene = PosedScene::new(spec)?;
    let (depth, segmentation) = (0..spec.frames).map(|t| scene.render(t)).unzip();
    Ok(SceneOutput {
        record,
        depth,
        segmentation,
    })
}
