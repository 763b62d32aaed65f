//! Pinhole camera model with Brown-Conrady lens distortion.
//!
//! Conventions used throughout the crate:
//! - world (field) frame in millimeters, `z = 0` is the carpet, z up;
//! - [`CameraPose`] maps world to camera: `p_cam = R * p_world + t`;
//! - camera frame is x right, y down, z forward (optical axis);
//! - angles are degrees at API boundaries and radians internally.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Camera-frame depth below which a point counts as behind the camera.
const MIN_DEPTH: f64 = 1e-9;
/// Ray z-component below which a ray counts as parallel to a horizontal plane.
const MIN_RAY_Z: f64 = 1e-12;
/// Tolerance for the rotation orthonormality and determinant checks.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

const UNDISTORT_MAX_ITERATIONS: usize = 20;
const UNDISTORT_STEP_TOLERANCE: f64 = 1e-12;
const UNDISTORT_RESIDUAL_TOLERANCE: f64 = 1e-8;

/// A point in the field frame, millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn ground(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &WorldPoint) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }
}

/// An image location in pixels (column `u`, row `v`). May lie outside the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Brown-Conrady radial (`k1`, `k2`, `k3`) and tangential (`p1`, `p2`) coefficients.
///
/// All zeros is an ideal pinhole.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
}

impl Distortion {
    pub const NONE: Distortion = Distortion {
        k1: 0.0,
        k2: 0.0,
        k3: 0.0,
        p1: 0.0,
        p2: 0.0,
    };

    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.k3 == 0.0 && self.p1 == 0.0 && self.p2 == 0.0
    }

    pub fn is_finite(&self) -> bool {
        [self.k1, self.k2, self.k3, self.p1, self.p2]
            .iter()
            .all(|c| c.is_finite())
    }

    /// Applies the distortion to normalized image coordinates.
    pub fn distort_normalized(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (xd, yd)
    }

    /// Inverts [`Distortion::distort_normalized`] by fixed-point iteration.
    pub fn undistort_normalized(&self, xd: f64, yd: f64) -> Result<(f64, f64)> {
        if self.is_zero() {
            return Ok((xd, yd));
        }
        let (mut x, mut y) = (xd, yd);
        for _ in 0..UNDISTORT_MAX_ITERATIONS {
            let r2 = x * x + y * y;
            let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
            let dx = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
            let dy = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
            let nx = (xd - dx) / radial;
            let ny = (yd - dy) / radial;
            let step = (nx - x).hypot(ny - y);
            x = nx;
            y = ny;
            if !step.is_finite() {
                return Err(Error::NonConvergence(f64::INFINITY));
            }
            if step < UNDISTORT_STEP_TOLERANCE {
                break;
            }
        }
        let (cx, cy) = self.distort_normalized(x, y);
        let residual = (cx - xd).hypot(cy - yd);
        if !(residual < UNDISTORT_RESIDUAL_TOLERANCE) {
            return Err(Error::NonConvergence(residual));
        }
        Ok((x, y))
    }
}

/// Intrinsic parameters: `K = [[alpha_x, gamma, u0], [0, alpha_y, v0], [0, 0, 1]]` plus distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub u0: f64,
    pub v0: f64,
    pub gamma: f64,
    #[serde(default)]
    pub distortion: Distortion,
}

impl CameraIntrinsics {
    pub fn new(
        alpha_x: f64,
        alpha_y: f64,
        u0: f64,
        v0: f64,
        gamma: f64,
        distortion: Distortion,
    ) -> Result<Self> {
        let k = Self {
            alpha_x,
            alpha_y,
            u0,
            v0,
            gamma,
            distortion,
        };
        k.validate()?;
        Ok(k)
    }

    /// Ideal pinhole with zero skew and no distortion.
    pub fn pinhole(alpha_x: f64, alpha_y: f64, u0: f64, v0: f64) -> Result<Self> {
        Self::new(alpha_x, alpha_y, u0, v0, 0.0, Distortion::NONE)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_x > 0.0 && self.alpha_x.is_finite())
            || !(self.alpha_y > 0.0 && self.alpha_y.is_finite())
        {
            return Err(Error::InvalidIntrinsics(format!(
                "focal scales must be positive and finite (alpha_x = {}, alpha_y = {})",
                self.alpha_x, self.alpha_y
            )));
        }
        if !(self.u0.is_finite() && self.v0.is_finite() && self.gamma.is_finite()) {
            return Err(Error::InvalidIntrinsics(
                "principal point and skew must be finite".into(),
            ));
        }
        if !self.distortion.is_finite() {
            return Err(Error::InvalidIntrinsics(
                "distortion coefficients must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn with_distortion(mut self, distortion: Distortion) -> Self {
        self.distortion = distortion;
        self
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.alpha_x,
            self.gamma,
            self.u0, //
            0.0,
            self.alpha_y,
            self.v0, //
            0.0,
            0.0,
            1.0,
        )
    }

    /// Closed-form inverse of the upper-triangular `K`.
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let (ax, ay, g, u0, v0) = (self.alpha_x, self.alpha_y, self.gamma, self.u0, self.v0);
        Matrix3::new(
            1.0 / ax,
            -g / (ax * ay),
            (g * v0 - ay * u0) / (ax * ay),
            0.0,
            1.0 / ay,
            -v0 / ay,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Pixel to normalized image coordinates (`K^-1`), distortion not removed.
    pub fn pixel_to_normalized(&self, px: PixelPoint) -> (f64, f64) {
        let y = (px.v - self.v0) / self.alpha_y;
        let x = (px.u - self.u0 - self.gamma * y) / self.alpha_x;
        (x, y)
    }

    pub fn normalized_to_pixel(&self, x: f64, y: f64) -> PixelPoint {
        PixelPoint::new(
            self.alpha_x * x + self.gamma * y + self.u0,
            self.alpha_y * y + self.v0,
        )
    }

    /// Maps an ideal (undistorted) pixel to where the lens actually images it.
    pub fn distort(&self, px: PixelPoint) -> PixelPoint {
        if self.distortion.is_zero() {
            return px;
        }
        let (x, y) = self.pixel_to_normalized(px);
        let (xd, yd) = self.distortion.distort_normalized(x, y);
        self.normalized_to_pixel(xd, yd)
    }
}

/// Rigid transform from the field frame to the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraPose {
    /// Builds a pose, checking `R^T R = I` and `det R = +1` within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !is_rotation(&rotation) || !translation.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidRotation);
        }
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

    /// Builds a pose from an arbitrary 3x3 matrix by projecting it onto the nearest rotation.
    pub fn from_approximate_rotation(m: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::new(nearest_rotation(m), translation)
    }

    /// Pose from an axis-angle vector (radians) and a translation.
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::from_scaled_axis(axis_angle).into_inner(),
            translation,
        }
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        Rotation3::from_matrix_unchecked(self.rotation).scaled_axis()
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// World point expressed in the camera frame.
    pub fn transform(&self, p: &WorldPoint) -> Vector3<f64> {
        self.rotation * p.to_vector() + self.translation
    }

    /// Camera center in the field frame, `-R^T t`.
    pub fn camera_center(&self) -> WorldPoint {
        WorldPoint::from_vector(&(-(self.rotation.transpose() * self.translation)))
    }

    /// Camera-frame direction rotated into the field frame (`R^T d`).
    pub fn direction_to_world(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * d
    }
}

/// Euler angles in degrees, `R = R_z(kappa) * R_y(phi) * R_x(omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub omega: f64,
    pub phi: f64,
    pub kappa: f64,
}

impl EulerAngles {
    pub const fn new(omega: f64, phi: f64, kappa: f64) -> Self {
        Self { omega, phi, kappa }
    }
}

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_degrees(deg: f64) -> f64 {
    let mut a = deg % 360.0;
    if a > 180.0 {
        a -= 360.0;
    } else if a <= -180.0 {
        a += 360.0;
    }
    a
}

pub fn is_rotation(r: &Matrix3<f64>) -> bool {
    if !r.iter().all(|v| v.is_finite()) {
        return false;
    }
    let off = r.transpose() * r - Matrix3::identity();
    off.iter().all(|v| v.abs() <= ROTATION_TOLERANCE)
        && (r.determinant() - 1.0).abs() <= ROTATION_TOLERANCE
}

/// Nearest rotation in the Frobenius sense (polar decomposition via SVD).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        r = u * fix * v_t;
    }
    r
}

/// Projects a world point to a (distorted) pixel.
pub fn project(p: &WorldPoint, k: &CameraIntrinsics, pose: &CameraPose) -> Result<PixelPoint> {
    let pc = pose.transform(p);
    if !(pc.z > MIN_DEPTH) {
        return Err(Error::PointBehindCamera(pc.z));
    }
    let (x, y) = (pc.x / pc.z, pc.y / pc.z);
    let (xd, yd) = k.distortion.distort_normalized(x, y);
    Ok(k.normalized_to_pixel(xd, yd))
}

/// Removes lens distortion from a pixel. Identity when the distortion is zero.
pub fn undistort(px: PixelPoint, k: &CameraIntrinsics) -> Result<PixelPoint> {
    if k.distortion.is_zero() {
        return Ok(px);
    }
    let (xd, yd) = k.pixel_to_normalized(px);
    let (x, y) = k.distortion.undistort_normalized(xd, yd)?;
    Ok(k.normalized_to_pixel(x, y))
}

/// Intersects a camera-frame viewing ray with the horizontal plane `z = plane_z`.
///
/// The ray direction may have any positive scale.
pub fn intersect_ray_with_plane(
    ray_cam: &Vector3<f64>,
    pose: &CameraPose,
    plane_z: f64,
) -> Result<WorldPoint> {
    let center = pose.camera_center().to_vector();
    let d = pose.direction_to_world(ray_cam);
    if d.z.abs() < MIN_RAY_Z * ray_cam.norm().max(1.0) {
        return Err(Error::RayParallelToPlane);
    }
    let s = (plane_z - center.z) / d.z;
    if !(s > 0.0) {
        return Err(Error::PointNotOnGround);
    }
    let p = center + d * s;
    Ok(WorldPoint::new(p.x, p.y, plane_z))
}

/// Back-projects a pixel onto the plane `z = plane_z` (inverse perspective mapping).
pub fn back_project_to_plane(
    px: PixelPoint,
    k: &CameraIntrinsics,
    pose: &CameraPose,
    plane_z: f64,
) -> Result<WorldPoint> {
    let ideal = undistort(px, k)?;
    let ray = k.inverse_matrix() * Vector3::new(ideal.u, ideal.v, 1.0);
    intersect_ray_with_plane(&ray, pose, plane_z)
}

pub fn camera_center(pose: &CameraPose) -> WorldPoint {
    pose.camera_center()
}

/// `R_z(kappa) * R_y(phi) * R_x(omega)`.
pub fn rotation_from_euler(e: &EulerAngles) -> Matrix3<f64> {
    let (so, co) = e.omega.to_radians().sin_cos();
    let (sp, cp) = e.phi.to_radians().sin_cos();
    let (sk, ck) = e.kappa.to_radians().sin_cos();
    Matrix3::new(
        ck * cp,
        ck * sp * so - sk * co,
        ck * sp * co + sk * so,
        sk * cp,
        sk * sp * so + ck * co,
        sk * sp * co - ck * so,
        -sp,
        cp * so,
        cp * co,
    )
}

/// Pose whose camera sits at `camera_center` with orientation given by `e`.
pub fn pose_from_euler(e: &EulerAngles, camera_center: &WorldPoint) -> CameraPose {
    let rotation = rotation_from_euler(e);
    let translation = -(rotation * camera_center.to_vector());
    CameraPose {
        rotation,
        translation,
    }
}

/// Inverse of [`pose_from_euler`].
pub fn euler_from_pose(pose: &CameraPose) -> Result<(EulerAngles, WorldPoint)> {
    let r = pose.rotation();
    let cos_phi = r[(0, 0)].hypot(r[(1, 0)]);
    if cos_phi < 1e-9 {
        return Err(Error::GimbalLock);
    }
    let phi = (-r[(2, 0)]).atan2(cos_phi);
    let omega = r[(2, 1)].atan2(r[(2, 2)]);
    let kappa = r[(1, 0)].atan2(r[(0, 0)]);
    let angles = EulerAngles::new(
        wrap_degrees(omega.to_degrees()),
        wrap_degrees(phi.to_degrees()),
        wrap_degrees(kappa.to_degrees()),
    );
    Ok((angles, pose.camera_center()))
}
