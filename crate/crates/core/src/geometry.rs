//! Metric types and pinhole projection algebra.
//!
//! Conventions used everywhere in the crate:
//!
//! * A [`Pose`] maps camera coordinates to world coordinates,
//!   `p_world = R * p_cam + t`. The camera center in the world is `t`.
//! * Cameras look along `+z`, with `x` to the right and `y` down, so the
//!   pixel `v` coordinate grows downward.
//! * Pixel coordinates are continuous; the image covers `[0, width] x [0, height]`.

use core::ops::Mul;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
/// Continuous pixel coordinate `(u, v)`.
pub type Pixel = Vector2<f64>;

/// Minimum camera-frame depth for a point to count as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-9;

const ORTHONORMAL_TOLERANCE: f64 = 1e-9;
const SMALL_ANGLE: f64 = 1e-8;
const NEAR_PI: f64 = 1e-4;

#[inline]
pub(crate) fn skew(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

#[inline]
fn vee_antisymmetric(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// A proper rotation matrix (orthonormal, determinant +1).
///
/// A rotation built from a quaternion remembers that quaternion, so it
/// serializes back to identical numbers. Equality compares matrices only.
#[derive(Clone, Copy, Debug)]
pub struct Rotation {
    m: Matrix3<f64>,
    source: Option<[f64; 4]>,
}

impl PartialEq for Rotation {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation::wrap(Matrix3::identity())
    }

    /// Wraps `m` after checking `mᵀm = I` and `det m = 1` within 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NotARotation);
        }
        let gram = m.transpose() * m - Matrix3::identity();
        if gram.amax() > ORTHONORMAL_TOLERANCE
            || (m.determinant() - 1.0).abs() > ORTHONORMAL_TOLERANCE
        {
            return Err(Error::NotARotation);
        }
        Ok(Rotation::wrap(m))
    }

    /// Wraps a matrix that is known to be a rotation up to rounding.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation::wrap(m)
    }

    #[inline]
    fn wrap(m: Matrix3<f64>) -> Self {
        Rotation { m, source: None }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Self {
        Rotation::wrap(self.m.transpose())
    }

    /// Exponential map from an axis-angle vector (radians).
    pub fn exp(omega: &Vec3) -> Self {
        let theta = omega.norm();
        let k = skew(omega);
        if theta < SMALL_ANGLE {
            return Rotation::wrap(Matrix3::identity() + k);
        }
        let a = libm::sin(theta) / theta;
        let b = (1.0 - libm::cos(theta)) / (theta * theta);
        Rotation::wrap(Matrix3::identity() + k * a + k * k * b)
    }

    /// Logarithm map to an axis-angle vector with angle in `[0, π]`.
    pub fn log(&self) -> Vec3 {
        let r = &self.m;
        let vee = vee_antisymmetric(r);
        let cos_theta = 0.5 * (r.trace() - 1.0);
        let sin_theta = 0.5 * vee.norm();
        let theta = libm::atan2(sin_theta, cos_theta);

        if theta < SMALL_ANGLE {
            return vee * 0.5;
        }
        if core::f64::consts::PI - theta < NEAR_PI {
            // The symmetric part is cosθ·I + (1 − cosθ)·aaᵀ; read the axis off
            // the column with the largest diagonal entry.
            let sym = (r + r.transpose()) * 0.5;
            let outer = (sym - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
            let mut k = 0;
            for i in 1..3 {
                if outer[(i, i)] > outer[(k, k)] {
                    k = i;
                }
            }
            let mut axis: Vec3 = outer.column(k).into_owned() / libm::sqrt(outer[(k, k)]);
            axis /= axis.norm();
            if axis.dot(&vee) < 0.0 {
                axis = -axis;
            }
            return axis * theta;
        }
        vee * (theta / (2.0 * sin_theta))
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let vee = vee_antisymmetric(&self.m);
        libm::atan2(0.5 * vee.norm(), 0.5 * (self.m.trace() - 1.0))
    }

    /// Angle in radians of the relative rotation between `self` and `other`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        (self.inverse() * *other).angle()
    }

    /// Builds a rotation from a quaternion `[w, x, y, z]`, normalizing it first.
    pub fn from_quaternion(q: [f64; 4]) -> Result<Self> {
        let n = libm::sqrt(q.iter().map(|v| v * v).sum::<f64>());
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::NotARotation);
        }
        let [w, x, y, z] = q.map(|v| v / n);
        let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
        let m = Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        );
        Ok(Rotation {
            m,
            source: Some(q.map(|v| sign * v)),
        })
    }

    /// Unit quaternion `[w, x, y, z]` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        if let Some(q) = self.source {
            return q;
        }
        let m = &self.m;
        let tr = m.trace();
        let q = if tr > 0.0 {
            let s = 2.0 * libm::sqrt(1.0 + tr);
            [
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            ]
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * libm::sqrt(1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]);
            [
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            ]
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * libm::sqrt(1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]);
            [
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            ]
        } else {
            let s = 2.0 * libm::sqrt(1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]);
            [
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            ]
        };
        let n = libm::sqrt(q.iter().map(|v| v * v).sum::<f64>());
        let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
        q.map(|v| sign * v / n)
    }

    /// Spherical interpolation from `self` (s = 0) to `other` (s = 1).
    pub fn slerp(&self, other: &Rotation, s: f64) -> Rotation {
        let delta = (self.inverse() * *other).log();
        *self * Rotation::exp(&(delta * s))
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation::wrap(self.m * rhs.m)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.m * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.m * rhs
    }
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose::new(Rotation::identity(), t)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose::new(r_inv, -(r_inv * self.translation))
    }

    /// Camera frame to world frame.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.m * p + self.translation
    }

    /// World frame to camera frame.
    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.m.transpose() * (p - self.translation)
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// Optical axis direction in the world frame.
    pub fn forward(&self) -> Vec3 {
        self.rotation.m.column(2).into_owned()
    }

    /// Serialized form: `[qw, qx, qy, qz, tx, ty, tz]`.
    ///
    /// A pose loaded with [`Pose::from_array`] serializes back to the same
    /// numbers bit for bit.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation.to_quaternion();
        let t = self.translation;
        [q[0], q[1], q[2], q[3], t.x, t.y, t.z]
    }

    pub fn from_array(a: &[f64; 7]) -> Result<Pose> {
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::NotARotation);
        }
        let rotation = Rotation::from_quaternion([a[0], a[1], a[2], a[3]])?;
        Ok(Pose::new(rotation, Vec3::new(a[4], a[5], a[6])))
    }

    /// Linear translation and spherical rotation interpolation.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        Pose::new(
            self.rotation.slerp(&other.rotation, s),
            self.translation + (other.translation - self.translation) * s,
        )
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(p: &Pose) -> Pose {
    p.inverse()
}

pub fn rotation_exp(axis_angle: &Vec3) -> Rotation {
    Rotation::exp(axis_angle)
}

pub fn rotation_log(r: &Rotation) -> Vec3 {
    r.log()
}

/// Pinhole intrinsics without distortion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let intr = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(self.cx > 0.0 && self.cx < f64::from(self.width)) {
            return Err(Error::InvalidIntrinsics("cx must lie inside the image"));
        }
        if !(self.cy > 0.0 && self.cy < f64::from(self.height)) {
            return Err(Error::InvalidIntrinsics("cy must lie inside the image"));
        }
        Ok(())
    }

    /// Projects a camera-frame point.
    #[inline]
    pub fn project_camera(&self, p: &Vec3) -> Result<Pixel> {
        if p.z <= MIN_DEPTH {
            return Err(Error::BehindCamera { depth: p.z });
        }
        Ok(Pixel::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Projects a world point seen from `pose`. The pixel may fall outside the image.
    #[inline]
    pub fn project(&self, pose: &Pose, p: &Vec3) -> Result<Pixel> {
        self.project_camera(&pose.inverse_transform_point(p))
    }

    /// Camera-frame point at `depth` along the pixel's viewing ray.
    pub fn backproject(&self, px: &Pixel, depth: f64) -> Result<Vec3> {
        if !(depth > 0.0) {
            return Err(Error::NonPositiveDepth(depth));
        }
        Ok(Vec3::new(
            (px.x - self.cx) / self.fx * depth,
            (px.y - self.cy) / self.fy * depth,
            depth,
        ))
    }

    pub fn contains(&self, px: &Pixel) -> bool {
        px.x >= 0.0
            && px.y >= 0.0
            && px.x <= f64::from(self.width)
            && px.y <= f64::from(self.height)
    }

    /// Unit viewing direction of a pixel in the camera frame.
    pub fn bearing(&self, px: &Pixel) -> Vec3 {
        Vec3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0).normalize()
    }

    /// World-space ray through `px` for a camera at `pose`.
    pub fn pixel_to_ray(&self, pose: &Pose, px: &Pixel) -> Result<Ray> {
        if !self.contains(px) {
            return Err(Error::OutOfImage { u: px.x, v: px.y });
        }
        Ok(Ray {
            origin: pose.translation,
            direction: pose.rotation * self.bearing(px),
        })
    }

    /// Full horizontal field of view in degrees.
    pub fn horizontal_fov_deg(&self) -> f64 {
        (libm::atan(self.cx / self.fx) + libm::atan((f64::from(self.width) - self.cx) / self.fx))
            .to_degrees()
    }

    /// Full vertical field of view in degrees.
    pub fn vertical_fov_deg(&self) -> f64 {
        (libm::atan(self.cy / self.fy) + libm::atan((f64::from(self.height) - self.cy) / self.fy))
            .to_degrees()
    }
}

/// Half-line with a unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::ZeroDirection);
        }
        Ok(Ray {
            origin,
            direction: direction / n,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Angle between two directions in degrees, in `[0, 180]`.
pub fn angular_error(a: &Vec3, b: &Vec3) -> Result<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::ZeroDirection);
    }
    let (ua, ub) = (a / na, b / nb);
    // atan2 form of acos(clamp(ua·ub)); stays accurate near 0° and 180°.
    Ok(libm::atan2(ua.cross(&ub).norm(), ua.dot(&ub).clamp(-1.0, 1.0)).to_degrees())
}

/// Camera viewing volume: apex plus the four image-corner rays.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frustum {
    pub apex: Vec3,
    /// Unit directions through pixels `(0,0)`, `(w,0)`, `(w,h)`, `(0,h)`.
    pub corners: [Vec3; 4],
    pub near: f64,
    pub far: f64,
}

impl Frustum {
    pub fn new(pose: &Pose, intr: &CameraIntrinsics, near: f64, far: f64) -> Result<Self> {
        if !(near > 0.0 && near < far) {
            return Err(Error::BadRange { near, far });
        }
        let (w, h) = (f64::from(intr.width), f64::from(intr.height));
        let px = [
            Pixel::new(0.0, 0.0),
            Pixel::new(w, 0.0),
            Pixel::new(w, h),
            Pixel::new(0.0, h),
        ];
        let mut corners = [Vec3::zeros(); 4];
        for (c, p) in corners.iter_mut().zip(px.iter()) {
            *c = intr.pixel_to_ray(pose, p)?.direction;
        }
        Ok(Frustum {
            apex: pose.translation,
            corners,
            near,
            far,
        })
    }

    /// World positions of the four corners at distance `d` along the optical axis.
    pub fn corner_points(&self, forward: &Vec3, d: f64) -> [Vec3; 4] {
        self.corners.map(|c| self.apex + c * (d / c.dot(forward)))
    }
}

pub fn make_frustum(pose: &Pose, intr: &CameraIntrinsics, near: f64, far: f64) -> Result<Frustum> {
    Frustum::new(pose, intr, near, far)
}
