//! Orientation arithmetic: unit quaternions, rotation matrices, the continuous
//! 6D rotation encoding and planar headings.
//!
//! The simulator stores attitude as a unit quaternion. Rotation matrices and
//! the 6D encoding are derived views used for observations and task data.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::GeomError;

/// Numerical floor below which a 6D input is considered degenerate.
pub const SIXD_DEGENERACY_TOL: f64 = 1e-8;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    // rem_euclid maps -π to π already; guard against rounding landing on -π.
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// Unit quaternion `w + xi + yj + zk`, body-to-world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Normalizes raw components. Returns identity for a zero input.
    pub fn from_components(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }.normalized()
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let k = s / n;
        Self {
            w: c,
            x: axis.x * k,
            y: axis.y * k,
            z: axis.z * k,
        }
        .canonical()
    }

    /// Pure rotation about +z. `x` and `y` are exactly zero.
    pub fn from_heading(theta: f64) -> Self {
        let (s, c) = (0.5 * theta).sin_cos();
        Self {
            w: c,
            x: 0.0,
            y: 0.0,
            z: s,
        }
        .canonical()
    }

    /// Uniformly distributed rotation (Shoemake's subgroup algorithm).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random::<f64>() * 2.0 * PI;
        let u3: f64 = rng.random::<f64>() * 2.0 * PI;
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        Self {
            w: b * u3.cos(),
            x: a * u2.sin(),
            y: a * u2.cos(),
            z: b * u3.sin(),
        }
        .normalized()
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Self::identity();
        }
        Self {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
        .canonical()
    }

    /// Flips the sign so that `w >= 0`. Both signs encode the same rotation.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            Self {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            self
        }
    }

    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product without renormalization.
    fn hamilton(&self, r: &Self) -> Self {
        let q = self;
        Self {
            w: q.w * r.w - q.x * r.x - q.y * r.y - q.z * r.z,
            x: q.w * r.x + q.x * r.w + q.y * r.z - q.z * r.y,
            y: q.w * r.y - q.x * r.z + q.y * r.w + q.z * r.x,
            z: q.w * r.z + q.x * r.y - q.y * r.x + q.z * r.w,
        }
    }

    pub fn to_rotation_matrix(&self) -> RotationMatrix {
        let Self { w, x, y, z } = *self;
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let (xy, xz, yz) = (x * y, x * z, y * z);
        let (wx, wy, wz) = (w * x, w * y, w * z);
        RotationMatrix(Matrix3::new(
            1.0 - 2.0 * (yy + zz),
            2.0 * (xy - wz),
            2.0 * (xz + wy),
            2.0 * (xy + wz),
            1.0 - 2.0 * (xx + zz),
            2.0 * (yz - wx),
            2.0 * (xz - wy),
            2.0 * (yz + wx),
            1.0 - 2.0 * (xx + yy),
        ))
    }

    /// Rotates a body-frame vector into the world frame.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.to_rotation_matrix().0 * v
    }

    /// Rotates a world-frame vector into the body frame.
    pub fn inverse_rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.to_rotation_matrix().0.transpose() * v
    }

    /// Yaw of the body x-axis projected on the world xy plane.
    pub fn heading(&self) -> f64 {
        let Self { w, x, y, z } = *self;
        (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.w.abs().min(1.0).acos()
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, rhs: Self) -> Self {
        self.hamilton(&rhs).normalized()
    }
}

/// Orthonormal 3×3 matrix with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn about_z(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Row-major entry access.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).abs().max()
    }

    /// Geodesic angle `arccos((tr R − 1)/2)` in `[0, π]`.
    pub fn geodesic_angle(&self) -> f64 {
        ((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: Self) -> Self {
        Self(self.0 * rhs.0)
    }
}

/// First two columns of a rotation matrix, `a₁` then `a₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SixDRotation(pub [f64; 6]);

impl SixDRotation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn first(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    fn second(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }
}

/// Planar heading in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heading(f64);

impl Heading {
    pub fn new(theta: f64) -> Self {
        Self(wrap_angle(theta))
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    /// `(cos θ, sin θ)`.
    pub fn encode(self) -> [f64; 2] {
        let (s, c) = self.0.sin_cos();
        [c, s]
    }
}

pub fn rotmat_to_sixd(r: &RotationMatrix) -> SixDRotation {
    debug_assert!(
        r.orthonormality_error() < 1e-6,
        "rotmat_to_sixd on non-orthonormal input"
    );
    let m = &r.0;
    SixDRotation([m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]])
}

/// Gram–Schmidt decode of the 6D encoding into a proper rotation.
pub fn sixd_to_rotmat(v: &SixDRotation) -> Result<RotationMatrix, GeomError> {
    let a1 = v.first();
    let a2 = v.second();
    let n1 = a1.norm();
    if !(n1 > SIXD_DEGENERACY_TOL) {
        return Err(GeomError::DegenerateSixD {
            reason: "first column has vanishing norm",
        });
    }
    let b1 = a1 / n1;
    let residual = a2 - b1 * b1.dot(&a2);
    let n2 = residual.norm();
    if !(n2 > SIXD_DEGENERACY_TOL) {
        return Err(GeomError::DegenerateSixD {
            reason: "columns are parallel",
        });
    }
    let b2 = residual / n2;
    let b3 = b1.cross(&b2);
    Ok(RotationMatrix(Matrix3::from_columns(&[b1, b2, b3])))
}

/// `ΔR = Rsᵀ Rg`: the goal attitude expressed in the craft's body frame.
pub fn relative_rotation(rs: &RotationMatrix, rg: &RotationMatrix) -> RotationMatrix {
    RotationMatrix(rs.0.transpose() * rg.0)
}

/// Propagates `q` by a constant body rate over `dt`.
pub fn integrate_orientation(q: &UnitQuaternion, omega_body: &Vector3<f64>, dt: f64) -> UnitQuaternion {
    debug_assert!(dt > 0.0);
    let half = omega_body * (0.5 * dt);
    let angle = half.norm();
    if angle == 0.0 {
        return q.canonical();
    }
    let (s, c) = angle.sin_cos();
    let k = s / angle;
    let dq = UnitQuaternion {
        w: c,
        x: half.x * k,
        y: half.y * k,
        z: half.z * k,
    };
    q.hamilton(&dq).normalized()
}

/// Signed wrapped difference `theta_goal − theta` in `(-π, π]`.
pub fn heading_delta(theta: Heading, theta_goal: Heading) -> f64 {
    wrap_angle(theta_goal.radians() - theta.radians())
}
