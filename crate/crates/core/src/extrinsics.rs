//! Camera pose from hand-marked field landmarks (Perspective-n-Point).

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{
    nearest_rotation, project, undistort, CameraIntrinsics, CameraPose, PixelPoint, WorldPoint,
};
use crate::error::{Error, Result};
use crate::intrinsics::{extrinsics_from_homography, homography_from_pairs, null_vector};
use crate::optim::{levenberg_marquardt, FnProblem, LmOptions};

/// Field dimensions in millimeters. Defaults are the division B field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldGeometry {
    pub field_length: f64,
    pub field_width: f64,
    pub goal_width: f64,
    pub goal_depth: f64,
    pub goal_height: f64,
    pub penalty_area_depth: f64,
    pub penalty_area_width: f64,
}

impl Default for FieldGeometry {
    fn default() -> Self {
        Self::division_b()
    }
}

impl FieldGeometry {
    pub fn division_b() -> Self {
        Self {
            field_length: 9000.0,
            field_width: 6000.0,
            goal_width: 1000.0,
            goal_depth: 180.0,
            goal_height: 155.0,
            penalty_area_depth: 1000.0,
            penalty_area_width: 2000.0,
        }
    }

    pub fn division_a() -> Self {
        Self {
            field_length: 12000.0,
            field_width: 9000.0,
            goal_width: 1800.0,
            goal_depth: 180.0,
            goal_height: 155.0,
            penalty_area_depth: 1800.0,
            penalty_area_width: 3600.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.field_length,
            self.field_width,
            self.goal_width,
            self.goal_depth,
            self.goal_height,
            self.penalty_area_depth,
            self.penalty_area_width,
        ];
        if !all.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidGeometry(
                "all dimensions must be positive".into(),
            ));
        }
        if self.penalty_area_depth >= self.field_length / 2.0
            || self.penalty_area_width >= self.field_width
        {
            return Err(Error::InvalidGeometry(
                "penalty area does not fit inside the field".into(),
            ));
        }
        if self.goal_width >= self.field_width {
            return Err(Error::InvalidGeometry(
                "goal is wider than the field".into(),
            ));
        }
        Ok(())
    }
}

/// Rigid placement of the canonical field frame inside the frame used for
/// calibration: rotate about z by `rotation_deg`, then add `offset_mm`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameTransform {
    pub rotation_deg: f64,
    pub offset_mm: [f64; 2],
}

impl FrameTransform {
    pub fn apply(&self, p: &WorldPoint) -> WorldPoint {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        WorldPoint::new(
            c * p.x - s * p.y + self.offset_mm[0],
            s * p.x + c * p.y + self.offset_mm[1],
            p.z,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldLandmark {
    pub name: String,
    pub world: WorldPoint,
}

/// Named landmarks of one field.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkCatalog {
    landmarks: Vec<FieldLandmark>,
}

impl LandmarkCatalog {
    pub fn get(&self, name: &str) -> Option<&FieldLandmark> {
        self.landmarks.iter().find(|l| l.name == name)
    }

    pub fn lookup(&self, name: &str) -> Result<&FieldLandmark> {
        self.get(name)
            .ok_or_else(|| Error::UnknownLandmark(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &FieldLandmark> {
        self.landmarks.iter()
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn transformed(&self, frame: &FrameTransform) -> Self {
        Self {
            landmarks: self
                .landmarks
                .iter()
                .map(|l| FieldLandmark {
                    name: l.name.clone(),
                    world: frame.apply(&l.world),
                })
                .collect(),
        }
    }
}

/// Landmarks used for the five-point calibration: goal bottom corners and
/// center, and the two penalty-area corners facing the field.
pub const CALIBRATION_LANDMARKS: [&str; 5] = [
    "goal_bottom_left",
    "goal_bottom_right",
    "penalty_front_left",
    "penalty_front_right",
    "goal_bottom_center",
];

/// Landmark catalog in the canonical field frame: origin at the field center,
/// +x toward the goal used for calibration, z up.
///
/// Names without prefix belong to the +x half; `opp_` names are their images
/// under `(x, y) -> (-x, -y)`. "left" is seen from the field center facing the goal.
pub fn field_landmarks(geom: &FieldGeometry) -> Result<LandmarkCatalog> {
    geom.validate()?;
    let hl = geom.field_length / 2.0;
    let hw = geom.field_width / 2.0;
    let pw = geom.penalty_area_width / 2.0;
    let pd = hl - geom.penalty_area_depth;
    let gw = geom.goal_width / 2.0;
    let gh = geom.goal_height;
    let features: [(&str, [f64; 3]); 11] = [
        ("field_corner_left", [hl, hw, 0.0]),
        ("field_corner_right", [hl, -hw, 0.0]),
        ("penalty_goal_left", [hl, pw, 0.0]),
        ("penalty_goal_right", [hl, -pw, 0.0]),
        ("penalty_front_left", [pd, pw, 0.0]),
        ("penalty_front_right", [pd, -pw, 0.0]),
        ("goal_bottom_left", [hl, gw, 0.0]),
        ("goal_bottom_right", [hl, -gw, 0.0]),
        ("goal_bottom_center", [hl, 0.0, 0.0]),
        ("goal_top_left", [hl, gw, gh]),
        ("goal_top_right", [hl, -gw, gh]),
    ];
    let mut landmarks = Vec::with_capacity(2 * features.len());
    for (name, [x, y, z]) in features {
        landmarks.push(FieldLandmark {
            name: name.to_string(),
            world: WorldPoint::new(x, y, z),
        });
    }
    for (name, [x, y, z]) in features {
        landmarks.push(FieldLandmark {
            name: format!("opp_{name}"),
            world: WorldPoint::new(-x, -y, z),
        });
    }
    Ok(LandmarkCatalog { landmarks })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpCorrespondence {
    pub pixel: PixelPoint,
    pub landmark: FieldLandmark,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    pub pose: CameraPose,
    /// Root mean square over residual components, pixels.
    pub rmse: f64,
    pub initial_rmse: f64,
}

fn rmse_of(residuals: &DVector<f64>) -> f64 {
    if residuals.is_empty() {
        0.0
    } else {
        (residuals.norm_squared() / residuals.len() as f64).sqrt()
    }
}

fn pnp_residuals(
    world: &[WorldPoint],
    pixels: &[PixelPoint],
    k: &CameraIntrinsics,
    pose: &CameraPose,
) -> DVector<f64> {
    let mut r = DVector::zeros(2 * world.len());
    for (i, (w, px)) in world.iter().zip(pixels).enumerate() {
        match project(w, k, pose) {
            Ok(p) => {
                r[2 * i] = p.u - px.u;
                r[2 * i + 1] = p.v - px.v;
            }
            Err(_) => {
                r[2 * i] = f64::NAN;
                r[2 * i + 1] = f64::NAN;
            }
        }
    }
    r
}

fn check_not_collinear(world: &[WorldPoint]) -> Result<()> {
    let n = world.len() as f64;
    let centroid = world
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.to_vector())
        / n;
    let mut m = DMatrix::zeros(world.len(), 3);
    for (i, p) in world.iter().enumerate() {
        let d = p.to_vector() - centroid;
        m.set_row(i, &d.transpose());
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] == 0.0 || sv[1] < 1e-9 * sv[0] {
        return Err(Error::DegenerateConfiguration(
            "landmarks are collinear".into(),
        ));
    }
    Ok(())
}

/// Pose from points sharing one height `z0`, via a plane homography in normalized coordinates.
fn planar_initialization(world: &[WorldPoint], normalized: &[(f64, f64)]) -> Result<CameraPose> {
    let z0 = world[0].z;
    let pairs: Vec<_> = world
        .iter()
        .zip(normalized)
        .map(|(w, n)| ((w.x, w.y), *n))
        .collect();
    let h = homography_from_pairs(&pairs)?;
    let unit = CameraIntrinsics {
        alpha_x: 1.0,
        alpha_y: 1.0,
        u0: 0.0,
        v0: 0.0,
        gamma: 0.0,
        distortion: Default::default(),
    };
    let plane_pose = extrinsics_from_homography(&unit, &h)?;
    let r = *plane_pose.rotation();
    let t = plane_pose.translation() - r.column(2) * z0;
    CameraPose::new(r, t)
}

fn similarity_3d(points: &[Vector3<f64>]) -> nalgebra::Matrix4<f64> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mean = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean > 0.0 { 3f64.sqrt() / mean } else { 1.0 };
    let mut t = nalgebra::Matrix4::identity() * s;
    t[(3, 3)] = 1.0;
    t[(0, 3)] = -s * c.x;
    t[(1, 3)] = -s * c.y;
    t[(2, 3)] = -s * c.z;
    t
}

fn similarity_2d(points: &[(f64, f64)]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (cx, cy) = points
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (cx, cy) = (cx / n, cy / n);
    let mean = points
        .iter()
        .map(|p| (p.0 - cx).hypot(p.1 - cy))
        .sum::<f64>()
        / n;
    let s = if mean > 0.0 { 2f64.sqrt() / mean } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Pose from the normalized-coordinate 3x4 projection matrix (at least 6 general points).
fn dlt_initialization(world: &[WorldPoint], normalized: &[(f64, f64)]) -> Result<CameraPose> {
    let pts: Vec<Vector3<f64>> = world.iter().map(|w| w.to_vector()).collect();
    let t3 = similarity_3d(&pts);
    let t2 = similarity_2d(normalized);
    let mut a = DMatrix::zeros(2 * pts.len(), 12);
    for (i, (p, q)) in pts.iter().zip(normalized).enumerate() {
        let ph = t3 * p.push(1.0);
        let qh = t2 * Vector3::new(q.0, q.1, 1.0);
        let (u, v) = (qh.x / qh.z, qh.y / qh.z);
        for j in 0..4 {
            a[(2 * i, j)] = ph[j];
            a[(2 * i, 8 + j)] = -u * ph[j];
            a[(2 * i + 1, 4 + j)] = ph[j];
            a[(2 * i + 1, 8 + j)] = -v * ph[j];
        }
    }
    let (p, sv) = null_vector(&a);
    if sv[10] <= 1e-10 * sv[0] {
        return Err(Error::NoInitialization(
            "projection matrix is not determined (coplanar points?)".into(),
        ));
    }
    let pn = Matrix3x4::from_row_slice(p.as_slice());
    let t2_inv = t2
        .try_inverse()
        .ok_or_else(|| Error::NoInitialization("normalization".into()))?;
    let mut proj = t2_inv * pn * t3;
    let mut m: Matrix3<f64> = proj.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        proj = -proj;
        m = -m;
    }
    let scale = m.singular_values().mean();
    if !(scale > 0.0) {
        return Err(Error::NoInitialization(
            "projection matrix has a zero rotation block".into(),
        ));
    }
    let r = nearest_rotation(&m);
    let t = proj.column(3) / scale;
    CameraPose::new(r, t.into_owned())
}

/// Perspective-n-Point: closed-form initialization then LM on reprojection error.
pub fn solve_pnp(
    correspondences: &[PnpCorrespondence],
    k: &CameraIntrinsics,
) -> Result<PnpSolution> {
    if correspondences.len() < 4 {
        return Err(Error::InsufficientPoints {
            needed: 4,
            got: correspondences.len(),
        });
    }
    let world: Vec<WorldPoint> = correspondences.iter().map(|c| c.landmark.world).collect();
    let pixels: Vec<PixelPoint> = correspondences.iter().map(|c| c.pixel).collect();
    if !world.iter().all(|w| w.is_finite()) || !pixels.iter().all(|p| p.is_finite()) {
        return Err(Error::InvalidInput("non-finite correspondence".into()));
    }
    check_not_collinear(&world)?;

    let normalized = pixels
        .iter()
        .map(|px| undistort(*px, k).map(|p| k.pixel_to_normalized(p)))
        .collect::<Result<Vec<_>>>()?;

    let extent = world
        .iter()
        .map(|w| w.to_vector().norm())
        .fold(1.0, f64::max);
    let coplanar_z = world
        .iter()
        .all(|w| (w.z - world[0].z).abs() <= 1e-9 * extent);
    let init = if coplanar_z {
        planar_initialization(&world, &normalized)?
    } else if world.len() >= 6 {
        dlt_initialization(&world, &normalized)?
    } else {
        return Err(Error::NoInitialization(format!(
            "{} non-coplanar points; need a common height or at least 6 points",
            world.len()
        )));
    };

    let initial = pnp_residuals(&world, &pixels, k, &init);
    let initial_rmse = rmse_of(&initial);
    if !initial_rmse.is_finite() {
        return Err(Error::NoInitialization(
            "initial pose places landmarks behind the camera".into(),
        ));
    }

    let problem = FnProblem::new(6, 2 * world.len(), |x: &DVector<f64>| {
        let pose = CameraPose::from_axis_angle(
            Vector3::new(x[0], x[1], x[2]),
            Vector3::new(x[3], x[4], x[5]),
        );
        pnp_residuals(&world, &pixels, k, &pose)
    });
    let aa = init.axis_angle();
    let t = init.translation();
    let x0 = DVector::from_vec(vec![aa.x, aa.y, aa.z, t.x, t.y, t.z]);
    let result = levenberg_marquardt(&problem, &x0, &LmOptions::default())?;
    let x = &result.solution;
    let pose = CameraPose::from_axis_angle(
        Vector3::new(x[0], x[1], x[2]),
        Vector3::new(x[3], x[4], x[5]),
    );
    let rmse = rmse_of(&pnp_residuals(&world, &pixels, k, &pose));
    // The axis-angle round trip can cost a few ulps when the start is already exact.
    if !(rmse <= initial_rmse) {
        return Ok(PnpSolution {
            pose: init,
            rmse: initial_rmse,
            initial_rmse,
        });
    }
    Ok(PnpSolution {
        pose,
        rmse,
        initial_rmse,
    })
}

/// Residual below which a point is never flagged, pixels.
pub const MIN_FLAG_RESIDUAL_PX: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub name: String,
    pub residual: [f64; 2],
    pub error_px: f64,
    pub suspected_mismark: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReprojectionReport {
    pub entries: Vec<ReportEntry>,
    /// Absent for an empty report.
    pub rmse_px: Option<f64>,
    pub median_error_px: Option<f64>,
}

impl ReprojectionReport {
    pub fn flagged(&self) -> impl Iterator<Item = &ReportEntry> {
        self.entries.iter().filter(|e| e.suspected_mismark)
    }
}

/// Per-point residuals (projected minus marked) and suspected mismarks: points
/// whose error exceeds three times the median (and [`MIN_FLAG_RESIDUAL_PX`]).
pub fn reprojection_report(
    pose: &CameraPose,
    k: &CameraIntrinsics,
    correspondences: &[PnpCorrespondence],
) -> ReprojectionReport {
    let mut entries: Vec<ReportEntry> = correspondences
        .iter()
        .map(|c| {
            let residual = match project(&c.landmark.world, k, pose) {
                Ok(p) => [p.u - c.pixel.u, p.v - c.pixel.v],
                Err(_) => [f64::INFINITY, f64::INFINITY],
            };
            ReportEntry {
                name: c.landmark.name.clone(),
                residual,
                error_px: residual[0].hypot(residual[1]),
                suspected_mismark: false,
            }
        })
        .collect();
    if entries.is_empty() {
        return ReprojectionReport {
            entries,
            rmse_px: None,
            median_error_px: None,
        };
    }
    let mut errors: Vec<f64> = entries.iter().map(|e| e.error_px).collect();
    errors.sort_by(f64::total_cmp);
    let mid = errors.len() / 2;
    let median = if errors.len() % 2 == 0 {
        0.5 * (errors[mid - 1] + errors[mid])
    } else {
        errors[mid]
    };
    for e in &mut entries {
        e.suspected_mismark = e.error_px > 3.0 * median && e.error_px > MIN_FLAG_RESIDUAL_PX;
    }
    let sum: f64 = entries
        .iter()
        .map(|e| e.residual[0].powi(2) + e.residual[1].powi(2))
        .sum();
    let rmse = (sum / (2 * entries.len()) as f64).sqrt();
    ReprojectionReport {
        entries,
        rmse_px: Some(rmse),
        median_error_px: Some(median),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{euler_from_pose, pose_from_euler, EulerAngles};

    fn reference_k() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(642.41, 642.54, 322.80, 239.76).unwrap()
    }

    fn reference_pose() -> CameraPose {
        pose_from_euler(
            &EulerAngles::new(106.94, -0.43, -0.38),
            &WorldPoint::new(-5.38, -509.79, 171.40),
        )
    }

    /// Canonical frame rotated so the calibration goal sits 3 m ahead of the camera.
    fn calibration_frame() -> FrameTransform {
        FrameTransform {
            rotation_deg: 90.0,
            offset_mm: [0.0, -1500.0],
        }
    }

    fn synthesize(
        names: &[&str],
        k: &CameraIntrinsics,
        pose: &CameraPose,
    ) -> Vec<PnpCorrespondence> {
        let catalog = field_landmarks(&FieldGeometry::division_b())
            .unwrap()
            .transformed(&calibration_frame());
        names
            .iter()
            .map(|n| {
                let landmark = catalog.lookup(n).unwrap().clone();
                PnpCorrespondence {
                    pixel: project(&landmark.world, k, pose).unwrap(),
                    landmark,
                }
            })
            .collect()
    }

    fn general_scene(k: &CameraIntrinsics, pose: &CameraPose) -> Vec<PnpCorrespondence> {
        let pts = [
            (0.0, 1000.0, 0.0),
            (400.0, 1500.0, 50.0),
            (-300.0, 800.0, 120.0),
            (200.0, 2500.0, 0.0),
            (-600.0, 2000.0, 80.0),
            (100.0, 600.0, 20.0),
            (500.0, 1200.0, 155.0),
            (-150.0, 3000.0, 0.0),
            (700.0, 2800.0, 40.0),
            (-800.0, 1700.0, 10.0),
        ];
        pts.iter()
            .enumerate()
            .map(|(i, &(x, y, z))| {
                let world = WorldPoint::new(x, y, z);
                PnpCorrespondence {
                    pixel: project(&world, k, pose).unwrap(),
                    landmark: FieldLandmark {
                        name: format!("p{i}"),
                        world,
                    },
                }
            })
            .collect()
    }

    #[test]
    fn goal_center_position() {
        let c = field_landmarks(&FieldGeometry::division_b()).unwrap();
        assert_eq!(
            c.lookup("goal_bottom_center").unwrap().world,
            WorldPoint::new(4500.0, 0.0, 0.0)
        );
        assert_eq!(c.len(), 22);
    }

    #[test]
    fn landmarks_mirror_and_heights() {
        let geom = FieldGeometry::division_b();
        let c = field_landmarks(&geom).unwrap();
        for l in c.iter().filter(|l| !l.name.starts_with("opp_")) {
            let m = c.lookup(&format!("opp_{}", l.name)).unwrap();
            assert_eq!(m.world, WorldPoint::new(-l.world.x, -l.world.y, l.world.z));
        }
        assert!(c
            .iter()
            .all(|l| l.world.z == 0.0 || l.world.z == geom.goal_height));
        let mut names: Vec<_> = c.iter().map(|l| l.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), c.len());
    }

    #[test]
    fn invalid_geometry_rejected() {
        let mut g = FieldGeometry::division_b();
        g.penalty_area_depth = 5000.0;
        assert!(matches!(
            field_landmarks(&g),
            Err(Error::InvalidGeometry(_))
        ));
        g = FieldGeometry::division_b();
        g.goal_height = -1.0;
        assert!(matches!(
            field_landmarks(&g),
            Err(Error::InvalidGeometry(_))
        ));
    }

    #[test]
    fn five_point_reference_calibration() {
        let k = reference_k();
        let truth = reference_pose();
        let corr = synthesize(&CALIBRATION_LANDMARKS, &k, &truth);
        let sol = solve_pnp(&corr, &k).unwrap();
        let c = sol.pose.camera_center();
        assert!(
            (c.x + 5.38).abs() < 1e-4 && (c.y + 509.79).abs() < 1e-4 && (c.z - 171.40).abs() < 1e-4,
            "{c:?}"
        );
        let (e, _) = euler_from_pose(&sol.pose).unwrap();
        assert!((e.omega - 106.94).abs() < 1e-6);
        assert!((e.phi + 0.43).abs() < 1e-6);
        assert!((e.kappa + 0.38).abs() < 1e-6);
        assert!(sol.rmse <= sol.initial_rmse);
    }

    #[test]
    fn general_position_scene() {
        let k = reference_k();
        let truth = reference_pose();
        let corr = general_scene(&k, &truth);
        let sol = solve_pnp(&corr, &k).unwrap();
        assert!(sol.rmse < 1e-8, "rmse {}", sol.rmse);
        assert!((sol.pose.translation() - truth.translation()).norm() < 1e-6);
        assert!((sol.pose.rotation() - truth.rotation()).amax() < 1e-6);
    }

    #[test]
    fn ordering_invariance() {
        let k = reference_k();
        let truth = reference_pose();
        let corr = general_scene(&k, &truth);
        let mut rev = corr.clone();
        rev.reverse();
        let a = solve_pnp(&corr, &k).unwrap().pose;
        let b = solve_pnp(&rev, &k).unwrap().pose;
        assert!((a.rotation() - b.rotation()).amax() < 1e-9);
        assert!((a.translation() - b.translation()).amax() < 1e-9);
    }

    #[test]
    fn collinear_landmarks_are_degenerate() {
        let k = reference_k();
        let truth = reference_pose();
        let corr: Vec<_> = (0..4)
            .map(|i| {
                let world = WorldPoint::new(100.0 * i as f64, 1000.0, 0.0);
                PnpCorrespondence {
                    pixel: project(&world, &k, &truth).unwrap(),
                    landmark: FieldLandmark {
                        name: format!("c{i}"),
                        world,
                    },
                }
            })
            .collect();
        assert!(matches!(
            solve_pnp(&corr, &k),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn too_few_and_uninitializable() {
        let k = reference_k();
        let truth = reference_pose();
        let corr = general_scene(&k, &truth);
        assert!(matches!(
            solve_pnp(&corr[..3], &k),
            Err(Error::InsufficientPoints { needed: 4, got: 3 })
        ));
        assert!(matches!(
            solve_pnp(&corr[..5], &k),
            Err(Error::NoInitialization(_))
        ));
    }

    #[test]
    fn report_perfect_and_outlier() {
        let k = reference_k();
        let truth = reference_pose();
        let corr = general_scene(&k, &truth);
        let report = reprojection_report(&truth, &k, &corr);
        assert!(report.entries.iter().all(|e| e.error_px < 1e-8));
        assert_eq!(report.flagged().count(), 0);

        let mut bad = corr.clone();
        bad[3].pixel.u += 50.0;
        let sol = solve_pnp(&bad, &k).unwrap();
        let report = reprojection_report(&sol.pose, &k, &bad);
        let flagged: Vec<_> = report.flagged().map(|e| e.name.as_str()).collect();
        assert_eq!(flagged, vec!["p3"]);
    }

    #[test]
    fn empty_report() {
        let r = reprojection_report(&CameraPose::identity(), &reference_k(), &[]);
        assert!(r.entries.is_empty());
        assert_eq!(r.rmse_px, None);
    }
}
