//! Rigid-body propagation of a thruster-actuated craft.
//!
//! Thrusters are binary: a fired thruster applies its full force for the whole
//! control period. Forces are summed directly into a body-frame wrench and the
//! body is advanced with semi-implicit Euler sub-steps. There is no gravity.
//!
//! The planar (3DoF) variant integrates only `x`, `y`, heading and yaw rate;
//! the remaining channels of [`RigidState`] are written as exact zeros.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::DynamicsError;
use crate::geom::{integrate_orientation, UnitQuaternion};

/// Singular-value floor used for controllability rank.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dof {
    /// Floating platform: x, y, heading.
    Three,
    /// Free flyer: full position and attitude.
    Six,
}

impl Dof {
    pub fn default_thrusters(self) -> usize {
        match self {
            Dof::Three => 8,
            Dof::Six => 16,
        }
    }
}

/// Mass properties. The centre of mass is the body origin.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyParams {
    mass: f64,
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
}

impl BodyParams {
    pub const DEFAULT_MASS: f64 = 5.0;
    pub const DEFAULT_INERTIA_DIAG: [f64; 3] = [0.05, 0.05, 0.078];

    pub fn new(mass: f64, inertia: Matrix3<f64>) -> Result<Self, DynamicsError> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(DynamicsError::InvalidParams(format!(
                "mass must be positive, got {mass}"
            )));
        }
        if (inertia - inertia.transpose()).abs().max() > 1e-12 {
            return Err(DynamicsError::InvalidParams("inertia must be symmetric".into()));
        }
        if (0..3).any(|i| !(inertia[(i, i)] > 0.0)) {
            return Err(DynamicsError::InvalidParams(
                "inertia diagonal entries must be positive".into(),
            ));
        }
        // Cholesky succeeds exactly for symmetric positive definite matrices.
        if inertia.cholesky().is_none() {
            return Err(DynamicsError::InvalidParams("inertia must be positive definite".into()));
        }
        let inertia_inv = inertia
            .try_inverse()
            .ok_or_else(|| DynamicsError::InvalidParams("inertia is singular".into()))?;
        Ok(Self {
            mass,
            inertia,
            inertia_inv,
        })
    }

    pub fn diagonal(mass: f64, diag: [f64; 3]) -> Result<Self, DynamicsError> {
        Self::new(mass, Matrix3::from_diagonal(&Vector3::from(diag)))
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.inertia
    }

    pub fn inertia_inv(&self) -> &Matrix3<f64> {
        &self.inertia_inv
    }
}

impl Default for BodyParams {
    fn default() -> Self {
        Self::diagonal(Self::DEFAULT_MASS, Self::DEFAULT_INERTIA_DIAG).expect("default body is valid")
    }
}

/// Body-frame force and torque.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl std::ops::Add for Wrench {
    type Output = Wrench;

    fn add(self, rhs: Self) -> Self {
        Self {
            force: self.force + rhs.force,
            torque: self.torque + rhs.torque,
        }
    }
}

/// Thruster geometry in the body frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ThrusterLayout {
    points: Vec<Vector3<f64>>,
    directions: Vec<Vector3<f64>>,
    magnitude: f64,
    force_cols: Vec<Vector3<f64>>,
    torque_cols: Vec<Vector3<f64>>,
}

/// Corner offset of the default layouts, metres.
pub const DEFAULT_ARM: f64 = 0.25;
pub const DEFAULT_THRUST: f64 = 1.0;

impl ThrusterLayout {
    pub fn new(
        points: Vec<Vector3<f64>>,
        directions: Vec<Vector3<f64>>,
        magnitude: f64,
    ) -> Result<Self, DynamicsError> {
        if points.is_empty() {
            return Err(DynamicsError::InvalidParams("layout has no thrusters".into()));
        }
        if points.len() != directions.len() {
            return Err(DynamicsError::InvalidParams(format!(
                "{} application points but {} directions",
                points.len(),
                directions.len()
            )));
        }
        if !(magnitude > 0.0 && magnitude.is_finite()) {
            return Err(DynamicsError::InvalidParams(format!(
                "thrust magnitude must be positive, got {magnitude}"
            )));
        }
        for (i, d) in directions.iter().enumerate() {
            if (d.norm() - 1.0).abs() > 1e-12 {
                return Err(DynamicsError::InvalidParams(format!(
                    "thruster {i} direction has norm {}, expected 1",
                    d.norm()
                )));
            }
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(DynamicsError::InvalidParams("thruster points must be finite".into()));
        }
        let force_cols = directions.iter().map(|d| d * magnitude).collect();
        let torque_cols = points
            .iter()
            .zip(&directions)
            .map(|(p, d)| p.cross(d) * magnitude)
            .collect();
        Ok(Self {
            points,
            directions,
            magnitude,
            force_cols,
            torque_cols,
        })
    }

    /// Eight in-plane thrusters, two per corner of a square of half-side
    /// [`DEFAULT_ARM`]. Symmetric pairs translate, antisymmetric pairs spin.
    pub fn default_3dof() -> Self {
        let (points, directions) = planar_default_geometry();
        Self::new(points, directions, DEFAULT_THRUST).expect("default 3DoF layout is valid")
    }

    /// The planar eight plus a `+z` and a `-z` thruster at each corner.
    pub fn default_6dof() -> Self {
        let (mut points, mut directions) = planar_default_geometry();
        for corner in corners() {
            for dz in [1.0, -1.0] {
                points.push(corner);
                directions.push(Vector3::new(0.0, 0.0, dz));
            }
        }
        Self::new(points, directions, DEFAULT_THRUST).expect("default 6DoF layout is valid")
    }

    pub fn default_for(dof: Dof) -> Self {
        match dof {
            Dof::Three => Self::default_3dof(),
            Dof::Six => Self::default_6dof(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn directions(&self) -> &[Vector3<f64>] {
        &self.directions
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    /// Checks planarity (3DoF) and full controllability for `dof`.
    pub fn validate_for(&self, dof: Dof) -> Result<(), DynamicsError> {
        let wm = wrench_matrix(self);
        match dof {
            Dof::Three => {
                let planar = self
                    .points
                    .iter()
                    .zip(&self.directions)
                    .all(|(p, d)| p.z == 0.0 && d.z == 0.0);
                if !planar {
                    return Err(DynamicsError::InvalidParams(
                        "3DoF thrusters must lie in z = 0 and point within the xy plane".into(),
                    ));
                }
                let rank = wm.planar_rank(RANK_TOL);
                if rank != 3 {
                    return Err(DynamicsError::InvalidParams(format!(
                        "3DoF layout must span Fx, Fy, Tz (rank 3), got rank {rank}"
                    )));
                }
            }
            Dof::Six => {
                let rank = wm.rank(RANK_TOL);
                if rank != 6 {
                    return Err(DynamicsError::InvalidParams(format!(
                        "6DoF layout must span the full wrench space (rank 6), got rank {rank}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn corners() -> [Vector3<f64>; 4] {
    let a = DEFAULT_ARM;
    [
        Vector3::new(a, a, 0.0),
        Vector3::new(-a, a, 0.0),
        Vector3::new(-a, -a, 0.0),
        Vector3::new(a, -a, 0.0),
    ]
}

fn planar_default_geometry() -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let mut points = Vec::with_capacity(8);
    let mut directions = Vec::with_capacity(8);
    for c in corners() {
        points.push(c);
        directions.push(Vector3::new(-c.x.signum(), 0.0, 0.0));
        points.push(c);
        directions.push(Vector3::new(0.0, -c.y.signum(), 0.0));
    }
    (points, directions)
}

/// Position, attitude and velocities of one craft.
///
/// `lin_vel` is in the world frame, `ang_vel` in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidState {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion,
    pub lin_vel: Vector3<f64>,
    pub ang_vel: Vector3<f64>,
}

impl RigidState {
    pub fn at_rest(position: Vector3<f64>, orientation: UnitQuaternion) -> Self {
        Self {
            position,
            orientation,
            lin_vel: Vector3::zeros(),
            ang_vel: Vector3::zeros(),
        }
    }

    pub fn planar(x: f64, y: f64, heading: f64) -> Self {
        Self::at_rest(Vector3::new(x, y, 0.0), UnitQuaternion::from_heading(heading))
    }

    pub fn is_finite(&self) -> bool {
        let q = &self.orientation;
        self.position
            .iter()
            .chain(self.lin_vel.iter())
            .chain(self.ang_vel.iter())
            .all(|v| v.is_finite())
            && [q.w, q.x, q.y, q.z].iter().all(|v| v.is_finite())
    }

    /// Angular velocity in the world frame.
    pub fn ang_vel_world(&self) -> Vector3<f64> {
        self.orientation.rotate(&self.ang_vel)
    }

    /// Angular momentum `R·I·ω` in the world frame.
    pub fn angular_momentum(&self, params: &BodyParams) -> Vector3<f64> {
        self.orientation.rotate(&(params.inertia() * self.ang_vel))
    }
}

/// Sums the body-frame wrench of the fired thrusters.
pub fn net_wrench(layout: &ThrusterLayout, action: &[bool]) -> Result<Wrench, DynamicsError> {
    if action.len() != layout.len() {
        return Err(DynamicsError::LayoutMismatch {
            expected: layout.len(),
            got: action.len(),
        });
    }
    let mut w = Wrench::default();
    for ((&fire, f), t) in action.iter().zip(&layout.force_cols).zip(&layout.torque_cols) {
        if fire {
            w.force += f;
            w.torque += t;
        }
    }
    Ok(w)
}

/// Advances `state` by one control period under a constant action.
pub fn step(
    state: &RigidState,
    params: &BodyParams,
    layout: &ThrusterLayout,
    action: &[bool],
    dof: Dof,
    control_dt: f64,
    substeps: u32,
) -> Result<RigidState, DynamicsError> {
    debug_assert!(control_dt > 0.0 && substeps >= 1);
    let wrench = net_wrench(layout, action)?;
    let h = control_dt / f64::from(substeps.max(1));
    let next = match dof {
        Dof::Three => step_planar(state, params, &wrench, h, substeps),
        Dof::Six => step_spatial(state, params, &wrench, h, substeps),
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(DynamicsError::NonFiniteState)
    }
}

fn step_planar(state: &RigidState, params: &BodyParams, wrench: &Wrench, h: f64, substeps: u32) -> RigidState {
    let inv_m = 1.0 / params.mass();
    let inv_izz = 1.0 / params.inertia()[(2, 2)];
    let (fx, fy, tz) = (wrench.force.x, wrench.force.y, wrench.torque.z);
    let (mut px, mut py) = (state.position.x, state.position.y);
    let (mut vx, mut vy) = (state.lin_vel.x, state.lin_vel.y);
    let mut wz = state.ang_vel.z;
    let (mut qw, mut qz) = (state.orientation.w, state.orientation.z);
    for _ in 0..substeps {
        // Heading rotation from the half-angle quaternion (w, 0, 0, z).
        let c = qw * qw - qz * qz;
        let s = 2.0 * qw * qz;
        vx += (c * fx - s * fy) * inv_m * h;
        vy += (s * fx + c * fy) * inv_m * h;
        px += vx * h;
        py += vy * h;
        wz += tz * inv_izz * h;
        if wz != 0.0 {
            let (ds, dc) = (0.5 * wz * h).sin_cos();
            let nw = qw * dc - qz * ds;
            let nz = qw * ds + qz * dc;
            let n = (nw * nw + nz * nz).sqrt();
            qw = nw / n;
            qz = nz / n;
        }
    }
    if qw < 0.0 {
        qw = -qw;
        qz = -qz;
    }
    RigidState {
        position: Vector3::new(px, py, 0.0),
        orientation: UnitQuaternion {
            w: qw,
            x: 0.0,
            y: 0.0,
            z: qz,
        },
        lin_vel: Vector3::new(vx, vy, 0.0),
        ang_vel: Vector3::new(0.0, 0.0, wz),
    }
}

// Rotational update in momentum form: the world-frame angular momentum takes
// the torque impulse, then the body rate is recovered from the current
// attitude. This is the semi-implicit Euler discretization of Euler's
// equations (including the gyroscopic term) and conserves momentum exactly
// when no torque acts.
fn step_spatial(state: &RigidState, params: &BodyParams, wrench: &Wrench, h: f64, substeps: u32) -> RigidState {
    let inv_m = 1.0 / params.mass();
    let inertia_inv = params.inertia_inv();
    let mut p = state.position;
    let mut v = state.lin_vel;
    let mut q = state.orientation;
    let mut rot = q.to_rotation_matrix().0;
    let mut momentum = rot * (params.inertia() * state.ang_vel);
    let mut omega = state.ang_vel;
    for _ in 0..substeps {
        v += rot * wrench.force * (inv_m * h);
        p += v * h;
        momentum += rot * wrench.torque * h;
        omega = inertia_inv * (rot.transpose() * momentum);
        q = integrate_orientation(&q, &omega, h);
        rot = q.to_rotation_matrix().0;
    }
    if substeps > 0 {
        omega = inertia_inv * (rot.transpose() * momentum);
    }
    RigidState {
        position: p,
        orientation: q,
        lin_vel: v,
        ang_vel: omega,
    }
}

/// Per-thruster wrench columns, rows `(Fx, Fy, Fz, Tx, Ty, Tz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WrenchMatrix(pub DMatrix<f64>);

impl WrenchMatrix {
    pub fn rank(&self, tol: f64) -> usize {
        singular_rank(self.0.clone(), tol)
    }

    /// Rank of the `(Fx, Fy, Tz)` rows.
    pub fn planar_rank(&self, tol: f64) -> usize {
        singular_rank(self.0.select_rows(&[0, 1, 5]), tol)
    }
}

fn singular_rank(m: DMatrix<f64>, tol: f64) -> usize {
    m.svd(false, false).singular_values.iter().filter(|&&s| s > tol).count()
}

pub fn wrench_matrix(layout: &ThrusterLayout) -> WrenchMatrix {
    let n = layout.len();
    let mut m = DMatrix::zeros(6, n);
    for (i, (f, t)) in layout.force_cols.iter().zip(&layout.torque_cols).enumerate() {
        m.fixed_view_mut::<3, 1>(0, i).copy_from(f);
        m.fixed_view_mut::<3, 1>(3, i).copy_from(t);
    }
    WrenchMatrix(m)
}
