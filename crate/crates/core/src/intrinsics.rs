//! Planar-pattern intrinsic calibration.
//!
//! Closed-form initialization from pattern homographies followed by a joint
//! Levenberg-Marquardt refinement of intrinsics, distortion and per-view poses.
//! Corner detection is not done here: views carry already-measured pixels.

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{project, CameraIntrinsics, CameraPose, Distortion, PixelPoint, WorldPoint};
use crate::error::{Error, Result};
use crate::optim::{difference_step, levenberg_marquardt, LeastSquaresProblem, LmOptions};

/// Point on the calibration pattern plane (`z = 0`), millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternPoint {
    pub x: f64,
    pub y: f64,
}

impl PatternPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn to_world(self) -> WorldPoint {
        WorldPoint::new(self.x, self.y, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub pixel: PixelPoint,
    pub pattern: PatternPoint,
}

/// One image of the planar pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarView {
    pub id: String,
    pub correspondences: Vec<Correspondence>,
}

impl PlanarView {
    pub fn new(id: impl Into<String>, correspondences: Vec<Correspondence>) -> Result<Self> {
        let view = Self {
            id: id.into(),
            correspondences,
        };
        view.validate()?;
        Ok(view)
    }

    pub fn validate(&self) -> Result<()> {
        if self.correspondences.len() < 4 {
            return Err(Error::InsufficientPoints {
                needed: 4,
                got: self.correspondences.len(),
            });
        }
        for (i, a) in self.correspondences.iter().enumerate() {
            if !(a.pixel.is_finite() && a.pattern.x.is_finite() && a.pattern.y.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "view '{}': non-finite coordinate",
                    self.id
                )));
            }
            for b in &self.correspondences[i + 1..] {
                if a.pattern == b.pattern {
                    return Err(Error::InvalidInput(format!(
                        "view '{}': duplicate pattern point ({}, {})",
                        self.id, a.pattern.x, a.pattern.y
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSolution {
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<CameraPose>,
    /// Root mean square over all residual components (u and v), pixels.
    pub rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalibrationFlags {
    pub fix_skew: bool,
    pub fix_k3: bool,
}

impl Default for CalibrationFlags {
    fn default() -> Self {
        Self {
            fix_skew: true,
            fix_k3: true,
        }
    }
}

/// Similarity transform moving the centroid to the origin with mean distance sqrt(2).
fn normalizing_transform(points: &[(f64, f64)]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (cx, cy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.0, sy + p.1));
    let (cx, cy) = (cx / n, cy / n);
    let mean_dist = points
        .iter()
        .map(|p| (p.0 - cx).hypot(p.1 - cy))
        .sum::<f64>()
        / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn apply_h(h: &Matrix3<f64>, p: (f64, f64)) -> (f64, f64) {
    let v = h * Vector3::new(p.0, p.1, 1.0);
    (v.x / v.z, v.y / v.z)
}

/// True when the points span less than a line's worth of a plane.
fn is_collinear(points: &[(f64, f64)]) -> bool {
    let t = normalizing_transform(points);
    let mut m = DMatrix::zeros(points.len(), 2);
    for (i, p) in points.iter().enumerate() {
        let q = apply_h(&t, *p);
        m[(i, 0)] = q.0;
        m[(i, 1)] = q.1;
    }
    let sv = m.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    hi == 0.0 || lo < 1e-10 * hi
}

/// Right singular vector of the smallest singular value, plus the sorted singular values.
pub(crate) fn null_vector(a: &DMatrix<f64>) -> (DVector<f64>, Vec<f64>) {
    let cols = a.ncols();
    // SVD of a wide matrix only returns rank-many right singular vectors.
    let a = if a.nrows() < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.rows_mut(0, a.nrows()).copy_from(a);
        padded
    } else {
        a.clone()
    };
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("svd v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let smallest = *order.last().unwrap();
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    (v_t.row(smallest).transpose(), values)
}

/// Maps pattern points to pixels by a normalized DLT, scaled so that `H[2][2] = 1`.
pub fn estimate_homography(view: &PlanarView) -> Result<Matrix3<f64>> {
    let pairs: Vec<((f64, f64), (f64, f64))> = view
        .correspondences
        .iter()
        .map(|c| ((c.pattern.x, c.pattern.y), (c.pixel.u, c.pixel.v)))
        .collect();
    homography_from_pairs(&pairs)
}

/// Normalized DLT for `dst ~ H src`.
pub fn homography_from_pairs(pairs: &[((f64, f64), (f64, f64))]) -> Result<Matrix3<f64>> {
    if pairs.len() < 4 {
        return Err(Error::InsufficientPoints {
            needed: 4,
            got: pairs.len(),
        });
    }
    let src: Vec<(f64, f64)> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<(f64, f64)> = pairs.iter().map(|p| p.1).collect();
    if is_collinear(&src) || is_collinear(&dst) {
        return Err(Error::DegenerateConfiguration(
            "points are collinear".into(),
        ));
    }
    let ts = normalizing_transform(&src);
    let td = normalizing_transform(&dst);

    let mut a = DMatrix::zeros(2 * pairs.len(), 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let (x, y) = apply_h(&ts, *s);
        let (u, v) = apply_h(&td, *d);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let (h, sv) = null_vector(&a);
    if sv[7] <= 1e-10 * sv[0] {
        return Err(Error::DegenerateConfiguration(
            "homography system has a multi-dimensional null space".into(),
        ));
    }
    let hn = Matrix3::from_row_slice(h.as_slice());
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("normalization".into()))?;
    let hm = td_inv * hn * ts;
    let scale = hm[(2, 2)];
    if scale.abs() < 1e-300 {
        return Err(Error::DegenerateConfiguration(
            "homography has H33 = 0".into(),
        ));
    }
    Ok(hm / scale)
}

fn conic_row(h: &Matrix3<f64>, i: usize, j: usize) -> SVector<f64, 6> {
    let hi = h.column(i);
    let hj = h.column(j);
    SVector::<f64, 6>::from_row_slice(&[
        hi[0] * hj[0],
        hi[0] * hj[1] + hi[1] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ])
}

/// Closed-form intrinsics from at least 3 homographies (skew estimated).
pub fn zhang_closed_form(homographies: &[Matrix3<f64>]) -> Result<CameraIntrinsics> {
    closed_form(homographies, false)
}

/// Closed-form intrinsics with skew constrained to zero; needs at least 2 homographies.
pub fn zhang_closed_form_zero_skew(homographies: &[Matrix3<f64>]) -> Result<CameraIntrinsics> {
    closed_form(homographies, true)
}

fn closed_form(homographies: &[Matrix3<f64>], zero_skew: bool) -> Result<CameraIntrinsics> {
    let needed = if zero_skew { 2 } else { 3 };
    if homographies.len() < needed {
        return Err(Error::InsufficientViews(format!(
            "need at least {needed} views, got {}",
            homographies.len()
        )));
    }

    // Condition the pixel side so that K-scale entries are O(1).
    let scale = homographies
        .iter()
        .map(|h| {
            let c = h.column(2);
            (c.x / c.z).abs().max((c.y / c.z).abs())
        })
        .fold(0.0, f64::max)
        .max(1.0);
    let cond = Matrix3::new(1.0 / scale, 0.0, 0.0, 0.0, 1.0 / scale, 0.0, 0.0, 0.0, 1.0);

    let rows = 2 * homographies.len() + usize::from(zero_skew);
    let mut v = DMatrix::zeros(rows, 6);
    for (k, h) in homographies.iter().enumerate() {
        let h = cond * h;
        let h = h / h.norm();
        let v12 = conic_row(&h, 0, 1);
        let v11 = conic_row(&h, 0, 0);
        let v22 = conic_row(&h, 1, 1);
        v.row_mut(2 * k).copy_from(&v12.transpose());
        v.row_mut(2 * k + 1).copy_from(&(v11 - v22).transpose());
    }
    if zero_skew {
        v[(rows - 1, 1)] = 1.0;
    }

    let (b, sv) = null_vector(&v);
    if sv[4] <= 1e-10 * sv[0] {
        return Err(Error::InsufficientViews(
            "views do not constrain the intrinsics (degenerate motion)".into(),
        ));
    }
    let b = if b[0] < 0.0 { -b } else { b };
    let (b11, b12, b22, b13, b23, b33) = (b[0], b[1], b[2], b[3], b[4], b[5]);

    let denom = b11 * b22 - b12 * b12;
    if !(b11 > 0.0) || !(denom > 0.0) {
        return Err(Error::NonPositiveDefinite);
    }
    let v0 = (b12 * b13 - b11 * b23) / denom;
    let lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
    let ax2 = lambda / b11;
    let ay2 = lambda * b11 / denom;
    if !(ax2 > 0.0) || !(ay2 > 0.0) {
        return Err(Error::NonPositiveDefinite);
    }
    let ax = ax2.sqrt();
    let ay = ay2.sqrt();
    let gamma = if zero_skew {
        0.0
    } else {
        -b12 * ax2 * ay / lambda
    };
    let u0 = gamma * v0 / ay - b13 * ax2 / lambda;

    CameraIntrinsics::new(
        ax * scale,
        ay * scale,
        u0 * scale,
        v0 * scale,
        gamma * scale,
        Distortion::NONE,
    )
}

/// Pose of the pattern plane from its homography and known intrinsics.
pub fn extrinsics_from_homography(k: &CameraIntrinsics, h: &Matrix3<f64>) -> Result<CameraPose> {
    let kinv = k.inverse_matrix();
    let h1 = kinv * h.column(0);
    let h2 = kinv * h.column(1);
    let h3 = kinv * h.column(2);
    let norm = h1.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateConfiguration(
            "homography has a zero first column".into(),
        ));
    }
    let mut lambda = 1.0 / norm;
    // The pattern must be in front of the camera.
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let r3 = r1.cross(&r2);
    let t = h3 * lambda;
    let m = Matrix3::from_columns(&[r1, r2, r3]);
    CameraPose::from_approximate_rotation(&m, t)
}

/// Closed-form initialization: homographies, intrinsics, then per-view poses.
pub fn initialize_calibration(
    views: &[PlanarView],
    flags: CalibrationFlags,
) -> Result<CalibrationSolution> {
    if views.is_empty() {
        return Err(Error::InsufficientViews("no views".into()));
    }
    for v in views {
        v.validate()?;
    }
    let homographies = views
        .iter()
        .map(estimate_homography)
        .collect::<Result<Vec<_>>>()?;
    let intrinsics = if flags.fix_skew {
        zhang_closed_form_zero_skew(&homographies)?
    } else {
        zhang_closed_form(&homographies)?
    };
    let poses = homographies
        .iter()
        .map(|h| extrinsics_from_homography(&intrinsics, h))
        .collect::<Result<Vec<_>>>()?;
    let rmse = reprojection_rmse(views, &intrinsics, &poses);
    Ok(CalibrationSolution {
        intrinsics,
        poses,
        rmse,
    })
}

/// Full calibration: closed-form initialization followed by [`refine_calibration`].
pub fn calibrate(views: &[PlanarView], flags: CalibrationFlags) -> Result<CalibrationSolution> {
    let init = initialize_calibration(views, flags)?;
    refine_calibration(views, &init, flags)
}

/// RMS over all residual components; infinite if any point fails to project.
pub fn reprojection_rmse(views: &[PlanarView], k: &CameraIntrinsics, poses: &[CameraPose]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (view, pose) in views.iter().zip(poses) {
        for c in &view.correspondences {
            match project(&c.pattern.to_world(), k, pose) {
                Ok(px) => {
                    sum += (px.u - c.pixel.u).powi(2) + (px.v - c.pixel.v).powi(2);
                    count += 2;
                }
                Err(_) => return f64::INFINITY,
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Packing of calibration unknowns into a flat parameter vector.
struct Layout {
    flags: CalibrationFlags,
}

impl Layout {
    fn intrinsic_len(&self) -> usize {
        10 - usize::from(self.flags.fix_skew) - usize::from(self.flags.fix_k3)
    }

    fn pack(&self, k: &CameraIntrinsics, poses: &[CameraPose]) -> DVector<f64> {
        let mut p = vec![k.alpha_x, k.alpha_y];
        if !self.flags.fix_skew {
            p.push(k.gamma);
        }
        p.extend([k.u0, k.v0, k.distortion.k1, k.distortion.k2]);
        if !self.flags.fix_k3 {
            p.push(k.distortion.k3);
        }
        p.extend([k.distortion.p1, k.distortion.p2]);
        for pose in poses {
            p.extend(pose.axis_angle().iter());
            p.extend(pose.translation().iter());
        }
        DVector::from_vec(p)
    }

    /// Unchecked intrinsics: the optimizer may wander through invalid values.
    fn intrinsics(&self, x: &[f64], base: &CameraIntrinsics) -> CameraIntrinsics {
        let mut it = x.iter().copied();
        let mut next = || it.next().expect("parameter layout");
        let alpha_x = next();
        let alpha_y = next();
        let gamma = if self.flags.fix_skew {
            base.gamma
        } else {
            next()
        };
        let u0 = next();
        let v0 = next();
        let k1 = next();
        let k2 = next();
        let k3 = if self.flags.fix_k3 {
            base.distortion.k3
        } else {
            next()
        };
        let p1 = next();
        let p2 = next();
        CameraIntrinsics {
            alpha_x,
            alpha_y,
            u0,
            v0,
            gamma,
            distortion: Distortion { k1, k2, k3, p1, p2 },
        }
    }

    fn pose(&self, x: &[f64], view: usize) -> CameraPose {
        let o = self.intrinsic_len() + 6 * view;
        CameraPose::from_axis_angle(
            Vector3::new(x[o], x[o + 1], x[o + 2]),
            Vector3::new(x[o + 3], x[o + 4], x[o + 5]),
        )
    }
}

struct RefinementProblem<'a> {
    views: &'a [PlanarView],
    layout: Layout,
    base: CameraIntrinsics,
    offsets: Vec<usize>,
    residual_count: usize,
}

impl<'a> RefinementProblem<'a> {
    fn new(views: &'a [PlanarView], base: CameraIntrinsics, flags: CalibrationFlags) -> Self {
        let mut offsets = Vec::with_capacity(views.len());
        let mut total = 0;
        for v in views {
            offsets.push(total);
            total += 2 * v.correspondences.len();
        }
        Self {
            views,
            layout: Layout { flags },
            base,
            offsets,
            residual_count: total,
        }
    }

    fn view_residuals(
        &self,
        k: &CameraIntrinsics,
        pose: &CameraPose,
        view: &PlanarView,
        out: &mut [f64],
    ) {
        for (i, c) in view.correspondences.iter().enumerate() {
            match project(&c.pattern.to_world(), k, pose) {
                Ok(px) => {
                    out[2 * i] = px.u - c.pixel.u;
                    out[2 * i + 1] = px.v - c.pixel.v;
                }
                Err(_) => {
                    out[2 * i] = f64::NAN;
                    out[2 * i + 1] = f64::NAN;
                }
            }
        }
    }
}

impl LeastSquaresProblem for RefinementProblem<'_> {
    fn num_params(&self) -> usize {
        self.layout.intrinsic_len() + 6 * self.views.len()
    }

    fn num_residuals(&self) -> usize {
        self.residual_count
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let xs = x.as_slice();
        let k = self.layout.intrinsics(xs, &self.base);
        let mut r = DVector::zeros(self.residual_count);
        for (vi, view) in self.views.iter().enumerate() {
            let pose = self.layout.pose(xs, vi);
            let o = self.offsets[vi];
            let len = 2 * view.correspondences.len();
            self.view_residuals(&k, &pose, view, &mut r.as_mut_slice()[o..o + len]);
        }
        r
    }

    /// Central differences exploiting the block structure: pose parameters
    /// only touch their own view's residuals.
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.num_params();
        let ni = self.layout.intrinsic_len();
        let mut jac = DMatrix::zeros(self.residual_count, n);
        let mut probe = x.clone();
        for i in 0..ni {
            let h = difference_step(x[i], 1e-6);
            probe[i] = x[i] + h;
            let plus = self.residuals(&probe);
            probe[i] = x[i] - h;
            let minus = self.residuals(&probe);
            probe[i] = x[i];
            if !plus.iter().chain(minus.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFiniteResidual);
            }
            jac.set_column(i, &((plus - minus) / (2.0 * h)));
        }
        let k = self.layout.intrinsics(x.as_slice(), &self.base);
        for (vi, view) in self.views.iter().enumerate() {
            let o = self.offsets[vi];
            let len = 2 * view.correspondences.len();
            let mut plus = vec![0.0; len];
            let mut minus = vec![0.0; len];
            for j in 0..6 {
                let col = ni + 6 * vi + j;
                let h = difference_step(x[col], 1e-6);
                probe[col] = x[col] + h;
                self.view_residuals(&k, &self.layout.pose(probe.as_slice(), vi), view, &mut plus);
                probe[col] = x[col] - h;
                self.view_residuals(
                    &k,
                    &self.layout.pose(probe.as_slice(), vi),
                    view,
                    &mut minus,
                );
                probe[col] = x[col];
                for r in 0..len {
                    let d = (plus[r] - minus[r]) / (2.0 * h);
                    if !d.is_finite() {
                        return Err(Error::NonFiniteResidual);
                    }
                    jac[(o + r, col)] = d;
                }
            }
        }
        Ok(jac)
    }
}

/// Joint refinement of intrinsics, distortion and per-view poses.
///
/// Never returns a solution with a higher reprojection RMSE than `init`.
pub fn refine_calibration(
    views: &[PlanarView],
    init: &CalibrationSolution,
    flags: CalibrationFlags,
) -> Result<CalibrationSolution> {
    if views.len() != init.poses.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} views but {} initial poses",
            views.len(),
            init.poses.len()
        )));
    }
    let mut base = init.intrinsics;
    if flags.fix_skew {
        base.gamma = 0.0;
    }
    if flags.fix_k3 {
        base.distortion.k3 = 0.0;
    }
    let problem = RefinementProblem::new(views, base, flags);
    let x0 = problem.layout.pack(&base, &init.poses);
    let start_rmse = reprojection_rmse(views, &base, &init.poses);
    if !start_rmse.is_finite() {
        return Err(Error::NonFiniteResidual);
    }

    let result = levenberg_marquardt(&problem, &x0, &LmOptions::default())?;
    let xs = result.solution.as_slice();
    let intrinsics = problem.layout.intrinsics(xs, &base);
    intrinsics.validate()?;
    let poses: Vec<CameraPose> = (0..views.len())
        .map(|i| problem.layout.pose(xs, i))
        .collect();
    let rmse = reprojection_rmse(views, &intrinsics, &poses);
    Ok(CalibrationSolution {
        intrinsics,
        poses,
        rmse,
    })
}
