//! Camera and pose primitives.
//!
//! Conventions: a [`Pose`] maps camera-1 coordinates to camera-2 coordinates,
//! `x2 = R x1 + t`. Pixels use continuous coordinates in which the integer
//! value `i` is the center of pixel column (or row) `i`. All angles returned by
//! this module are in degrees.

use core::ops::Mul;
#[allow(unused_imports)] // std builds resolve these to inherent methods
use num_traits::Float;

use nalgebra::{Matrix3, Matrix3x4, Rotation3, Vector2, Vector3};

use crate::{Error, Result};

/// A point in a camera frame, meters.
pub type Point3 = Vector3<f64>;
/// A real-valued pixel location `(u, v)`.
pub type Pixel = Vector2<f64>;

/// Orthonormality / determinant tolerance of [`RotationMatrix`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;
/// Singular values below this are treated as zero by [`svd_orthogonalize`].
pub const SINGULAR_EPS: f64 = 1e-12;
/// Norm below which a translation has no direction.
pub const DEGENERATE_BASELINE: f64 = 1e-9;

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Checks `mᵀm = I` and `det m = 1` to [`ROTATION_TOLERANCE`].
    pub fn try_new(m: Matrix3<f64>) -> Result<Self> {
        if is_rotation(&m, ROTATION_TOLERANCE) {
            Ok(Self(m))
        } else {
            Err(Error::RotationUnderdetermined)
        }
    }

    /// Wraps `m` without checking. Callers guarantee it is a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Rotation of `angle_rad` about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle_rad: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle_rad == 0.0 {
            return Self::identity();
        }
        Self::from_rotation_vector(&(axis * (angle_rad / n)))
    }

    /// Exponential map of a rotation vector (axis times angle in radians).
    pub fn from_rotation_vector(omega: &Vector3<f64>) -> Self {
        Self(*Rotation3::new(*omega).matrix())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Rotation angle in degrees, in `[0, 180]`.
    pub fn angle_deg(&self) -> f64 {
        let m = &self.0;
        let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let axis = Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        );
        let sin = (axis.norm() * 0.5).min(1.0);
        sin.atan2(cos).to_degrees()
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;
    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for RotationMatrix {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

fn is_rotation(m: &Matrix3<f64>, tol: f64) -> bool {
    if !m.iter().all(|v| v.is_finite()) {
        return false;
    }
    let gram = m.transpose() * m - Matrix3::identity();
    gram.iter().all(|v| v.abs() <= tol) && (m.determinant() - 1.0).abs() <= tol
}

/// Rigid transform from camera 1 to camera 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(RotationMatrix::identity(), Vector3::zeros())
    }

    /// Builds the translation as `scale · direction`. A zero direction gives
    /// a zero translation.
    pub fn from_scale_direction(
        rotation: RotationMatrix,
        scale: f64,
        direction: &Vector3<f64>,
    ) -> Self {
        let n = direction.norm();
        let translation = if n > 0.0 {
            direction * (scale / n)
        } else {
            Vector3::zeros()
        };
        Self::new(rotation, translation)
    }

    pub fn transform(&self, x: &Point3) -> Point3 {
        self.rotation.matrix() * x + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt.matrix() * self.translation))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation.matrix() * other.translation + self.translation,
        )
    }

    /// The `[R | t]` matrix.
    pub fn to_matrix3x4(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.set_column(3, &self.translation);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.rotation
            .matrix()
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
    }
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
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
        if !(fx > 0.0 && fx.is_finite()) {
            return Err(Error::InvalidIntrinsics("fx must be positive"));
        }
        if !(fy > 0.0 && fy.is_finite()) {
            return Err(Error::InvalidIntrinsics("fy must be positive"));
        }
        if !(cx > 0.0 && cx < width as f64) {
            return Err(Error::InvalidIntrinsics("cx must lie inside (0, width)"));
        }
        if !(cy > 0.0 && cy < height as f64) {
            return Err(Error::InvalidIntrinsics("cy must lie inside (0, height)"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Whether `px` lies in the continuous image rectangle `[0, W) × [0, H)`.
    pub fn contains(&self, px: &Pixel) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }

    /// Projection without the cheirality check. Callers ensure `p.z > 0`.
    #[inline]
    pub(crate) fn project_unchecked(&self, p: &Point3) -> Pixel {
        Pixel::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

pub fn project(k: &CameraIntrinsics, p: &Point3) -> Result<Pixel> {
    if p.z <= MIN_DEPTH {
        return Err(Error::BehindCamera);
    }
    Ok(k.project_unchecked(p))
}

pub fn unproject(k: &CameraIntrinsics, px: &Pixel, depth: f64) -> Result<Point3> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::InvalidDepth);
    }
    Ok(Point3::new(
        (px.x - k.cx) / k.fx * depth,
        (px.y - k.cy) / k.fy * depth,
        depth,
    ))
}

pub fn transform(p: &Pose, x: &Point3) -> Point3 {
    p.transform(x)
}

/// Nearest rotation to `m` in Frobenius norm: `U diag(1, 1, det(UVᵀ)) Vᵀ`.
pub fn svd_orthogonalize(m: &Matrix3<f64>) -> Result<RotationMatrix> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::RotationUnderdetermined);
    }
    let svd = m.svd(true, true);
    let small = svd
        .singular_values
        .iter()
        .filter(|s| **s < SINGULAR_EPS)
        .count();
    if small >= 2 {
        return Err(Error::RotationUnderdetermined);
    }
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::RotationUnderdetermined),
    };
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    Ok(RotationMatrix(r))
}

/// Geodesic angle between two rotations, degrees in `[0, 180]`.
pub fn rotation_error_deg(r1: &RotationMatrix, r2: &RotationMatrix) -> f64 {
    RotationMatrix(r1.matrix().transpose() * r2.matrix()).angle_deg()
}

/// Angle between two translation directions, degrees. Returns 0 if either
/// vector has no direction.
pub fn translation_direction_error_deg(t1: &Vector3<f64>, t2: &Vector3<f64>) -> f64 {
    if t1.norm() < DEGENERATE_BASELINE || t2.norm() < DEGENERATE_BASELINE {
        return 0.0;
    }
    t1.cross(t2).norm().atan2(t1.dot(t2)).to_degrees()
}

/// Frobenius norm of the difference of the two `[R | t]` matrices.
///
/// Mixes unitless rotation entries with translation in meters.
pub fn pose_frobenius_distance(p1: &Pose, p2: &Pose) -> f64 {
    (p1.to_matrix3x4() - p2.to_matrix3x4()).norm()
}
