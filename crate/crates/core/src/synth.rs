//! Deterministic synthetic scenes: a known camera, pattern views, landmark
//! markings, regression samples and detections, all produced by forward
//! projection so the rest of the toolkit can be checked against exact truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{
    pose_from_euler, project, CameraIntrinsics, CameraPose, EulerAngles, PixelPoint, WorldPoint,
};
use crate::error::{Error, Result};
use crate::eval::{fixed, TruthRecord};
use crate::extrinsics::{field_landmarks, FieldGeometry, FrameTransform};
use crate::intrinsics::{CalibrationFlags, Correspondence, PatternPoint, PlanarView};
use crate::io::{
    to_json_lines, to_json_pretty, CalibrationFile, LandmarksFile, MarkedLandmark, TrainingRecord,
    ViewsFile,
};
use crate::pipeline::{bearing, frame_convert, DetectionRecord};
use crate::regression::{BoundingBox, ObjectClass, Weights};

const PIXEL_MARGIN: f64 = 2.0;
const MAX_VIEW_ATTEMPTS: usize = 500;
/// Classes placed on grid points, in turn.
const PLACED_CLASSES: [ObjectClass; 2] = [ObjectClass::Ball, ObjectClass::Robot];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternConfig {
    /// Inner corners along x.
    pub cols: usize,
    /// Inner corners along y.
    pub rows: usize,
    pub square_mm: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            cols: 9,
            rows: 6,
            square_mm: 25.0,
        }
    }
}

impl PatternConfig {
    pub fn points(&self) -> Vec<PatternPoint> {
        let mut out = Vec::with_capacity(self.cols * self.rows);
        for j in 0..self.rows {
            for i in 0..self.cols {
                out.push(PatternPoint::new(
                    i as f64 * self.square_mm,
                    j as f64 * self.square_mm,
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub intrinsics: CameraIntrinsics,
    pub euler_deg: EulerAngles,
    pub camera_center_mm: [f64; 3],
    /// Width and height, pixels.
    pub image_size: [u32; 2],
    pub field_geometry: FieldGeometry,
    /// Placement of the field landmarks in the calibration frame.
    pub landmark_frame: FrameTransform,
    pub grid_spacing_mm: f64,
    /// Number of grid points (nearest to the camera and fully in view) to place objects on.
    pub grid_points: usize,
    pub pattern: PatternConfig,
    pub views: usize,
    pub training_samples_per_class: usize,
    /// Ground-pixel map used to build boxes, per class.
    pub bbox_maps: BTreeMap<ObjectClass, Weights>,
    /// Standard deviation of Gaussian noise on every observed pixel.
    pub noise_px: f64,
}

pub fn reference_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::pinhole(642.41, 642.54, 322.80, 239.76).expect("valid intrinsics")
}

pub const REFERENCE_EULER_DEG: EulerAngles = EulerAngles::new(106.94, -0.43, -0.38);
pub const REFERENCE_CAMERA_CENTER_MM: [f64; 3] = [-5.38, -509.79, 171.40];

pub fn reference_pose() -> CameraPose {
    let c = REFERENCE_CAMERA_CENTER_MM;
    pose_from_euler(&REFERENCE_EULER_DEG, &WorldPoint::new(c[0], c[1], c[2]))
}

/// Landmark placement that puts a goal in front of the default camera.
pub const DEFAULT_LANDMARK_FRAME: FrameTransform = FrameTransform {
    rotation_deg: 90.0,
    offset_mm: [0.0, -1500.0],
};

pub fn default_bbox_maps() -> BTreeMap<ObjectClass, Weights> {
    BTreeMap::from([
        (
            ObjectClass::Ball,
            [[0.45, 0.0, 0.55, 0.0, 0.0], [0.0, -0.05, 0.0, 1.05, 1.5]],
        ),
        (
            ObjectClass::Robot,
            [[0.5, 0.0, 0.5, 0.0, 0.0], [0.0, -0.08, 0.0, 1.08, 2.0]],
        ),
        (
            ObjectClass::Goal,
            [[0.52, 0.0, 0.48, 0.0, 0.0], [0.0, -0.03, 0.0, 1.03, 1.0]],
        ),
    ])
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            intrinsics: reference_intrinsics(),
            euler_deg: REFERENCE_EULER_DEG,
            camera_center_mm: REFERENCE_CAMERA_CENTER_MM,
            image_size: [640, 480],
            field_geometry: FieldGeometry::division_b(),
            landmark_frame: DEFAULT_LANDMARK_FRAME,
            grid_spacing_mm: 250.0,
            grid_points: 30,
            pattern: PatternConfig::default(),
            views: 20,
            training_samples_per_class: 40,
            bbox_maps: default_bbox_maps(),
            noise_px: 0.0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

/// Linear part of a box map acting on the box center.
fn center_matrix(w: &Weights) -> Matrix2<f64> {
    Matrix2::new(
        w[0][0] + w[0][2],
        w[0][1] + w[0][3],
        w[1][0] + w[1][2],
        w[1][1] + w[1][3],
    )
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        self.field_geometry
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return Err(invalid("image size must be positive"));
        }
        if !(self.grid_spacing_mm.is_finite() && self.grid_spacing_mm > 0.0) {
            return Err(invalid("grid spacing must be positive"));
        }
        if self.grid_points == 0 {
            return Err(invalid("grid_points must be at least 1"));
        }
        let p = &self.pattern;
        if p.cols < 2 || p.rows < 2 || !(p.square_mm.is_finite() && p.square_mm > 0.0) {
            return Err(invalid(
                "pattern needs at least 2x2 corners and a positive square",
            ));
        }
        if self.views < 3 {
            return Err(invalid("at least 3 pattern views are needed"));
        }
        if self.training_samples_per_class < crate::regression::MIN_SAMPLES_PER_CLASS {
            return Err(invalid("too few training samples per class"));
        }
        if !(self.noise_px.is_finite() && self.noise_px >= 0.0) {
            return Err(invalid("noise_px must be finite and non-negative"));
        }
        if !self.camera_center_mm.iter().all(|v| v.is_finite()) || self.camera_center_mm[2] <= 0.0 {
            return Err(invalid("camera must be above the field plane"));
        }
        for class in ObjectClass::ALL {
            let w = self
                .bbox_maps
                .get(&class)
                .ok_or_else(|| invalid(format!("missing box map for {class}")))?;
            if !w.iter().flatten().all(|v| v.is_finite())
                || center_matrix(w).determinant().abs() < 1e-9
            {
                return Err(invalid(format!("box map for {class} is not invertible")));
            }
        }
        Ok(())
    }

    pub fn pose(&self) -> CameraPose {
        let c = self.camera_center_mm;
        pose_from_euler(&self.euler_deg, &WorldPoint::new(c[0], c[1], c[2]))
    }

    fn inside(&self, p: &PixelPoint) -> bool {
        let (w, h) = (self.image_size[0] as f64, self.image_size[1] as f64);
        p.u >= PIXEL_MARGIN
            && p.v >= PIXEL_MARGIN
            && p.u <= w - PIXEL_MARGIN
            && p.v <= h - PIXEL_MARGIN
    }
}

/// Physical width and height used to size boxes, millimeters.
fn object_size_mm(class: ObjectClass) -> (f64, f64) {
    match class {
        ObjectClass::Ball => (43.0, 43.0),
        ObjectClass::Robot => (180.0, 150.0),
        ObjectClass::Goal => (1000.0, 160.0),
    }
}

/// Box of the given size whose mapped ground pixel is exactly `ground`.
pub fn box_for_ground_pixel(
    weights: &Weights,
    ground: PixelPoint,
    width: f64,
    height: f64,
) -> Result<BoundingBox> {
    let (hw, hh) = (width / 2.0, height / 2.0);
    let offset = [-hw, -hh, hw, hh, 1.0];
    let dot = |row: &[f64; 5]| row.iter().zip(&offset).map(|(a, b)| a * b).sum::<f64>();
    let rhs = Vector2::new(ground.u - dot(&weights[0]), ground.v - dot(&weights[1]));
    let center = center_matrix(weights)
        .try_inverse()
        .ok_or_else(|| invalid("box map is not invertible"))?
        * rhs;
    BoundingBox::new(center.x - hw, center.y - hh, center.x + hw, center.y + hh)
}

struct Noise {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl Noise {
    fn new(seed: u64, sigma: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("valid sigma")),
        }
    }

    fn sample(&mut self) -> f64 {
        match &self.normal {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        }
    }

    fn pixel(&mut self, p: PixelPoint) -> PixelPoint {
        let du = self.sample();
        let dv = self.sample();
        PixelPoint::new(p.u + du, p.v + dv)
    }
}

/// Noise-free and noisy pattern views with the poses used to render them.
pub fn generate_views(
    config: &SceneConfig,
    seed: u64,
) -> Result<(Vec<PlanarView>, Vec<CameraPose>)> {
    config.validate()?;
    let k = &config.intrinsics;
    let pattern = config.pattern.points();
    let center = Vector3::new(
        (config.pattern.cols - 1) as f64 * config.pattern.square_mm / 2.0,
        (config.pattern.rows - 1) as f64 * config.pattern.square_mm / 2.0,
        0.0,
    );
    let extent = center.x.hypot(center.y) * 2.0;
    let focal = k.alpha_x.min(k.alpha_y);
    let span = config.image_size[0].min(config.image_size[1]) as f64;
    // Distance at which the pattern fills roughly half the shorter image side.
    let base_distance = 2.0 * focal * extent / span;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = Noise::new(seed ^ 0x5eed_0001, config.noise_px);
    let mut views = Vec::with_capacity(config.views);
    let mut poses = Vec::with_capacity(config.views);
    for idx in 0..config.views {
        let mut found = None;
        for _ in 0..MAX_VIEW_ATTEMPTS {
            let rot = Rotation3::from_euler_angles(
                rng.gen_range(-35f64..35.0).to_radians(),
                rng.gen_range(-35f64..35.0).to_radians(),
                rng.gen_range(-25f64..25.0).to_radians(),
            );
            let target = Vector3::new(
                rng.gen_range(-0.1..0.1) * base_distance,
                rng.gen_range(-0.1..0.1) * base_distance,
                base_distance * rng.gen_range(0.8..1.3),
            );
            let t = target - rot * center;
            let pose = CameraPose::new(*rot.matrix(), t)?;
            let pixels: Option<Vec<PixelPoint>> = pattern
                .iter()
                .map(|p| {
                    project(&p.to_world(), k, &pose)
                        .ok()
                        .filter(|px| config.inside(px))
                })
                .collect();
            if let Some(pixels) = pixels {
                found = Some((pose, pixels));
                break;
            }
        }
        let (pose, pixels) = found
            .ok_or_else(|| invalid("pattern does not fit in the image at any sampled pose"))?;
        let correspondences = pattern
            .iter()
            .zip(pixels)
            .map(|(pat, px)| Correspondence {
                pixel: noise.pixel(px),
                pattern: *pat,
            })
            .collect();
        views.push(PlanarView::new(format!("view_{idx:02}"), correspondences)?);
        poses.push(pose);
    }
    Ok((views, poses))
}

/// A complete scene, kept in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub views: Vec<PlanarView>,
    pub landmarks: LandmarksFile,
    pub training: Vec<TrainingRecord>,
    pub detections: Vec<DetectionRecord>,
    pub truth: Vec<TruthRecord>,
}

pub const SCENE_FILES: [&str; 7] = [
    "config.json",
    "calibration.json",
    "views.json",
    "landmarks.json",
    "regression.jsonl",
    "detections.jsonl",
    "truth.csv",
];

impl SyntheticScene {
    /// File name and content pairs, in [`SCENE_FILES`] order.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        let calibration = CalibrationFile::new(self.intrinsics, Some(&self.pose), None);
        let views = ViewsFile::from_views(&self.views, CalibrationFlags::default());
        let config = SceneRecord {
            seed: self.seed,
            config: self.config.clone(),
        };
        let mut truth = String::from("frame,class,field_x,field_y,rel_x,rel_y,rel_theta\n");
        for t in &self.truth {
            let _ = writeln!(
                truth,
                "{},{},{},{},{},{},{}",
                t.frame,
                t.class,
                fixed(t.field_x),
                fixed(t.field_y),
                fixed(t.rel_x),
                fixed(t.rel_y),
                fixed(t.rel_theta),
            );
        }
        vec![
            ("config.json", to_json_pretty(&config)),
            ("calibration.json", to_json_pretty(&calibration)),
            ("views.json", to_json_pretty(&views)),
            ("landmarks.json", to_json_pretty(&self.landmarks)),
            ("regression.jsonl", to_json_lines(&self.training)),
            ("detections.jsonl", to_json_lines(&self.detections)),
            ("truth.csv", truth),
        ]
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, content) in self.files() {
            std::fs::write(dir.join(name), content)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SceneRecord {
    seed: u64,
    config: SceneConfig,
}

/// Grid points on the field plane, nearest to the camera first, whose boxes
/// for every class fit inside the image.
fn object_points(config: &SceneConfig, pose: &CameraPose) -> Result<Vec<WorldPoint>> {
    let k = &config.intrinsics;
    let g = &config.field_geometry;
    let center = pose.camera_center();
    let step = config.grid_spacing_mm;
    let nx = (g.field_length / 2.0 / step).floor() as i64;
    let ny = (g.field_width / 2.0 / step).floor() as i64;
    let mut candidates = Vec::new();
    for i in -nx..=nx {
        for j in -ny..=ny {
            let p = WorldPoint::ground(i as f64 * step, j as f64 * step);
            let depth = pose.transform(&p).z;
            if depth <= 0.0 {
                continue;
            }
            let Ok(px) = project(&p, k, pose) else {
                continue;
            };
            let fits = PLACED_CLASSES.iter().all(|&class| {
                let (w, h) = box_size(config, class, depth, 1.0);
                box_for_ground_pixel(&config.bbox_maps[&class], px, w, h)
                    .map(|b| {
                        config.inside(&PixelPoint::new(b.xmin(), b.ymin()))
                            && config.inside(&PixelPoint::new(b.xmax(), b.ymax()))
                    })
                    .unwrap_or(false)
            });
            if fits {
                let d = (p.x - center.x).hypot(p.y - center.y);
                candidates.push((d, p));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.x.total_cmp(&b.1.x))
            .then(a.1.y.total_cmp(&b.1.y))
    });
    if candidates.len() < config.grid_points {
        return Err(invalid(format!(
            "only {} grid points are fully in view, {} requested",
            candidates.len(),
            config.grid_points
        )));
    }
    candidates.truncate(config.grid_points);
    Ok(candidates.into_iter().map(|(_, p)| p).collect())
}

fn box_size(config: &SceneConfig, class: ObjectClass, depth: f64, jitter: f64) -> (f64, f64) {
    let (w, h) = object_size_mm(class);
    let k = &config.intrinsics;
    // Small objects still get a few pixels so the box stays valid.
    (
        (k.alpha_x * w / depth * jitter).max(4.0),
        (k.alpha_y * h / depth / jitter).max(4.0),
    )
}

pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<SyntheticScene> {
    config.validate()?;
    let k = config.intrinsics;
    let pose = config.pose();
    let (views, _) = generate_views(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut noise = Noise::new(seed ^ 0x5eed_0002, config.noise_px);

    // Landmarks in view.
    let catalog = field_landmarks(&config.field_geometry)
        .map_err(|e| invalid(e.to_string()))?
        .transformed(&config.landmark_frame);
    let mut points = Vec::new();
    for lm in catalog.iter() {
        if pose.transform(&lm.world).z <= 0.0 {
            continue;
        }
        if let Ok(px) = project(&lm.world, &k, &pose) {
            if config.inside(&px) {
                let px = noise.pixel(px);
                points.push(MarkedLandmark {
                    name: lm.name.clone(),
                    pixel: [px.u, px.v],
                });
            }
        }
    }
    if points.len() < 4 {
        return Err(invalid(format!(
            "only {} field landmarks are visible; at least 4 are needed",
            points.len()
        )));
    }
    let landmarks = LandmarksFile {
        field_geometry: config.field_geometry,
        frame: Some(config.landmark_frame),
        points,
        extra: Vec::new(),
    };

    // Regression training samples from each class map.
    let (iw, ih) = (config.image_size[0] as f64, config.image_size[1] as f64);
    let mut training = Vec::new();
    for class in ObjectClass::ALL {
        let weights = &config.bbox_maps[&class];
        for _ in 0..config.training_samples_per_class {
            let w = rng.gen_range(6.0..iw / 4.0);
            let h = rng.gen_range(6.0..ih / 4.0);
            let x0 = rng.gen_range(0.0..iw - w);
            let y0 = rng.gen_range(0.0..ih - h);
            let b = BoundingBox::new(x0, y0, x0 + w, y0 + h)?;
            let f = b.features();
            let dot = |row: &[f64; 5]| row.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
            let g = noise.pixel(PixelPoint::new(dot(&weights[0]), dot(&weights[1])));
            training.push(TrainingRecord {
                class: class.to_string(),
                bbox: b.to_array(),
                ground_pixel: [g.u, g.v],
            });
        }
    }

    // Objects on the grid, alternating ball and robot.
    let mut detections = Vec::new();
    let mut truth = Vec::new();
    for (i, p) in object_points(config, &pose)?.into_iter().enumerate() {
        let class = PLACED_CLASSES[i % PLACED_CLASSES.len()];
        let depth = pose.transform(&p).z;
        let ground = project(&p, &k, &pose)?;
        let (w, h) = box_size(config, class, depth, rng.gen_range(0.9..1.1));
        let b = box_for_ground_pixel(&config.bbox_maps[&class], ground, w, h)?;
        let corners = b.to_array();
        let mut noisy = [0.0; 4];
        for (n, c) in noisy.iter_mut().zip(corners) {
            *n = c + noise.sample();
        }
        let bbox = BoundingBox::from_array(noisy)
            .map(|_| noisy)
            .unwrap_or(corners);
        let frame = format!("frame_{i:03}");
        let score = (rng.gen_range(0.6..1.0f64) * 1000.0).round() / 1000.0;
        detections.push(DetectionRecord {
            frame: frame.clone(),
            class: class.to_string(),
            score,
            bbox,
        });
        let rel = frame_convert(&p, &pose);
        truth.push(TruthRecord {
            frame,
            class: class.to_string(),
            field_x: p.x,
            field_y: p.y,
            rel_x: rel.0,
            rel_y: rel.1,
            rel_theta: bearing(rel.0, rel.1)?,
        });
    }

    Ok(SyntheticScene {
        config: config.clone(),
        seed,
        intrinsics: k,
        pose,
        views,
        landmarks,
        training,
        detections,
        truth,
    })
}
