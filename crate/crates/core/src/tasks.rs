//! Task suite: goal and spawn sampling, observation assembly, rewards and
//! episode termination.
//!
//! Observation layouts:
//!
//! | DoF | layout                                                    | width |
//! |-----|-----------------------------------------------------------|-------|
//! | 3   | `cos θ, sin θ, v_x, v_y, ω_z, tf, td₁..td₄`              | 10    |
//! | 6   | `6D(R_s), v_x, v_y, v_z, ω_x, ω_y, ω_z, tf, td₁..td₉`     | 22    |
//!
//! Task data (`td`) holds goal-minus-current differences in the world frame;
//! unused slots are zero. Velocities in the observation are world-frame.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Dof, RigidState};
use crate::error::TaskError;
use crate::geom::{heading_delta, relative_rotation, rotmat_to_sixd, Heading, RotationMatrix, UnitQuaternion};

pub const OBS_DIM_3DOF: usize = 10;
pub const OBS_DIM_6DOF: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    GoToXY,
    GoToPose2D,
    TrackXYVelocity,
    /// Linear plus yaw-rate tracking. Not part of the tf 0/1/2 table; uses
    /// tf = 3 and td = (Δv_x, Δv_y, Δω_z).
    TrackXYOVelocity,
    GoToXYZ,
    GoToPose3D,
    TrackXYZVelocity,
}

/// Goal family, shared across DoF classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskFamily {
    Position,
    Pose,
    Velocity,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::GoToXY,
        TaskKind::GoToPose2D,
        TaskKind::TrackXYVelocity,
        TaskKind::TrackXYOVelocity,
        TaskKind::GoToXYZ,
        TaskKind::GoToPose3D,
        TaskKind::TrackXYZVelocity,
    ];

    pub fn dof(self) -> Dof {
        match self {
            TaskKind::GoToXY | TaskKind::GoToPose2D | TaskKind::TrackXYVelocity | TaskKind::TrackXYOVelocity => {
                Dof::Three
            }
            TaskKind::GoToXYZ | TaskKind::GoToPose3D | TaskKind::TrackXYZVelocity => Dof::Six,
        }
    }

    pub fn family(self) -> TaskFamily {
        match self {
            TaskKind::GoToXY | TaskKind::GoToXYZ => TaskFamily::Position,
            TaskKind::GoToPose2D | TaskKind::GoToPose3D => TaskFamily::Pose,
            TaskKind::TrackXYVelocity | TaskKind::TrackXYOVelocity | TaskKind::TrackXYZVelocity => TaskFamily::Velocity,
        }
    }

    pub fn task_flag(self) -> f64 {
        match self {
            TaskKind::TrackXYOVelocity => 3.0,
            k => match k.family() {
                TaskFamily::Position => 0.0,
                TaskFamily::Pose => 1.0,
                TaskFamily::Velocity => 2.0,
            },
        }
    }

    /// Number of meaningful td entries.
    pub fn td_len(self) -> usize {
        match self {
            TaskKind::GoToXY | TaskKind::TrackXYVelocity => 2,
            TaskKind::TrackXYOVelocity | TaskKind::GoToXYZ | TaskKind::TrackXYZVelocity => 3,
            TaskKind::GoToPose2D => 4,
            TaskKind::GoToPose3D => 9,
        }
    }

    /// Number of td slots in the observation.
    pub fn td_slots(self) -> usize {
        match self.dof() {
            Dof::Three => 4,
            Dof::Six => 9,
        }
    }

    pub fn obs_dim(self) -> usize {
        match self.dof() {
            Dof::Three => OBS_DIM_3DOF,
            Dof::Six => OBS_DIM_6DOF,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::GoToXY => "gotoxy",
            TaskKind::GoToPose2D => "gotopose2d",
            TaskKind::TrackXYVelocity => "trackxyvelocity",
            TaskKind::TrackXYOVelocity => "trackxyovelocity",
            TaskKind::GoToXYZ => "gotoxyz",
            TaskKind::GoToPose3D => "gotopose3d",
            TaskKind::TrackXYZVelocity => "trackxyzvelocity",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        TaskKind::ALL.into_iter().find(|k| k.name() == key).ok_or_else(|| {
            let names: Vec<_> = TaskKind::ALL.iter().map(|k| k.name()).collect();
            format!("unknown task '{s}', expected one of: {}", names.join(", "))
        })
    }
}

/// Goal of one episode. Each variant belongs to exactly one [`TaskKind`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskGoal {
    Position2D {
        target: [f64; 2],
    },
    Pose2D {
        target: [f64; 2],
        heading: f64,
    },
    Velocity2D {
        velocity: [f64; 2],
    },
    VelocityOmega2D {
        velocity: [f64; 2],
        omega: f64,
    },
    Position3D {
        target: Vector3<f64>,
    },
    Pose3D {
        target: Vector3<f64>,
        rotation: RotationMatrix,
    },
    Velocity3D {
        velocity: Vector3<f64>,
    },
}

impl TaskGoal {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskGoal::Position2D { .. } => TaskKind::GoToXY,
            TaskGoal::Pose2D { .. } => TaskKind::GoToPose2D,
            TaskGoal::Velocity2D { .. } => TaskKind::TrackXYVelocity,
            TaskGoal::VelocityOmega2D { .. } => TaskKind::TrackXYOVelocity,
            TaskGoal::Position3D { .. } => TaskKind::GoToXYZ,
            TaskGoal::Pose3D { .. } => TaskKind::GoToPose3D,
            TaskGoal::Velocity3D { .. } => TaskKind::TrackXYZVelocity,
        }
    }

    /// Goal position in the world frame, for position and pose goals.
    pub fn target_position(&self) -> Option<Vector3<f64>> {
        match *self {
            TaskGoal::Position2D { target } | TaskGoal::Pose2D { target, .. } => {
                Some(Vector3::new(target[0], target[1], 0.0))
            }
            TaskGoal::Position3D { target } | TaskGoal::Pose3D { target, .. } => Some(target),
            _ => None,
        }
    }

    /// Goal linear velocity, for velocity goals.
    pub fn target_velocity(&self) -> Option<Vector3<f64>> {
        match *self {
            TaskGoal::Velocity2D { velocity } | TaskGoal::VelocityOmega2D { velocity, .. } => {
                Some(Vector3::new(velocity[0], velocity[1], 0.0))
            }
            TaskGoal::Velocity3D { velocity } => Some(velocity),
            _ => None,
        }
    }

    /// Replaces the goal velocity of a velocity goal. No effect on other goals.
    pub fn set_target_velocity(&mut self, v: Vector3<f64>) {
        match self {
            TaskGoal::Velocity2D { velocity } | TaskGoal::VelocityOmega2D { velocity, .. } => {
                *velocity = [v.x, v.y];
            }
            TaskGoal::Velocity3D { velocity } => *velocity = v,
            _ => {}
        }
    }

    fn check(&self, kind: TaskKind) -> Result<(), TaskError> {
        if self.kind() == kind {
            Ok(())
        } else {
            Err(TaskError::KindMismatch {
                task: kind.name(),
                goal: self.kind().name(),
            })
        }
    }

    /// Euclidean distance to the goal position (position and pose goals).
    pub fn position_error(&self, state: &RigidState) -> Option<f64> {
        self.target_position().map(|t| (t - state.position).norm())
    }

    /// Attitude error in radians (pose goals).
    pub fn rotation_error(&self, state: &RigidState) -> Option<f64> {
        match *self {
            TaskGoal::Pose2D { heading, .. } => {
                Some(heading_delta(Heading::new(state.orientation.heading()), Heading::new(heading)).abs())
            }
            TaskGoal::Pose3D { rotation, .. } => {
                Some(relative_rotation(&state.orientation.to_rotation_matrix(), &rotation).geodesic_angle())
            }
            _ => None,
        }
    }

    /// Norm of the linear velocity error (velocity goals).
    pub fn velocity_error(&self, state: &RigidState) -> Option<f64> {
        self.target_velocity().map(|v| (v - state.lin_vel).norm())
    }

    /// Yaw-rate error magnitude (TrackXYOVelocity only).
    pub fn omega_error(&self, state: &RigidState) -> Option<f64> {
        match *self {
            TaskGoal::VelocityOmega2D { omega, .. } => Some((omega - state.ang_vel.z).abs()),
            _ => None,
        }
    }

    /// Headline error: distance for position/pose goals, velocity error for
    /// tracking goals.
    pub fn primary_error(&self, state: &RigidState) -> f64 {
        self.position_error(state)
            .or_else(|| self.velocity_error(state))
            .unwrap_or(0.0)
    }
}

/// Shaping constants of the reward kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    pub sigma_position: f64,
    pub sigma_rotation: f64,
    pub sigma_velocity: f64,
    pub sigma_omega: f64,
    pub action_cost: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            sigma_position: 0.5,
            sigma_rotation: 0.25,
            sigma_velocity: 0.2,
            sigma_omega: 0.2,
            action_cost: 0.01,
        }
    }
}

/// Sampling distributions for goals and spawns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskParams {
    pub goal_speed_max: f64,
    pub goal_omega_max: f64,
    pub spawn_radius_train: (f64, f64),
    pub spawn_radius_eval: (f64, f64),
    pub reward: RewardParams,
}

impl TaskParams {
    pub fn default_for(dof: Dof) -> Self {
        let (train, eval) = match dof {
            Dof::Three => ((1.0, 4.0), (3.0, 4.0)),
            Dof::Six => ((1.0, 5.0), (1.0, 5.0)),
        };
        Self {
            goal_speed_max: 0.5,
            goal_omega_max: 0.5,
            spawn_radius_train: train,
            spawn_radius_eval: eval,
            reward: RewardParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpawnMode {
    Train,
    Eval,
}

/// Episode termination bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLimits {
    pub horizon: u32,
    /// Distance to the goal position beyond which a GoTo episode ends.
    pub out_of_bounds: f64,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        Self {
            horizon: 500,
            out_of_bounds: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DoneReason {
    Horizon,
    OutOfBounds,
}

impl DoneReason {
    /// Whether the episode was cut by the time limit rather than ended by the
    /// environment; truncated episodes are bootstrapped during training.
    pub fn is_truncation(self) -> bool {
        matches!(self, DoneReason::Horizon)
    }
}

fn uniform_direction<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(-PI..PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

pub fn sample_goal<R: Rng + ?Sized>(kind: TaskKind, params: &TaskParams, rng: &mut R) -> TaskGoal {
    match kind {
        TaskKind::GoToXY => TaskGoal::Position2D { target: [0.0, 0.0] },
        TaskKind::GoToPose2D => TaskGoal::Pose2D {
            target: [0.0, 0.0],
            heading: Heading::new(rng.random_range(-PI..PI)).radians(),
        },
        TaskKind::TrackXYVelocity | TaskKind::TrackXYOVelocity => {
            let angle: f64 = rng.random_range(-PI..PI);
            let speed = rng.random_range(0.0..=params.goal_speed_max);
            let velocity = [speed * angle.cos(), speed * angle.sin()];
            if kind == TaskKind::TrackXYVelocity {
                TaskGoal::Velocity2D { velocity }
            } else {
                let omega = rng.random_range(-params.goal_omega_max..=params.goal_omega_max);
                TaskGoal::VelocityOmega2D { velocity, omega }
            }
        }
        TaskKind::GoToXYZ => TaskGoal::Position3D {
            target: Vector3::zeros(),
        },
        TaskKind::GoToPose3D => TaskGoal::Pose3D {
            target: Vector3::zeros(),
            rotation: UnitQuaternion::random(rng).to_rotation_matrix(),
        },
        TaskKind::TrackXYZVelocity => {
            let speed = rng.random_range(0.0..=params.goal_speed_max);
            TaskGoal::Velocity3D {
                velocity: uniform_direction(rng) * speed,
            }
        }
    }
}

/// Spawns a craft at rest around the origin.
pub fn sample_initial_state<R: Rng + ?Sized>(
    kind: TaskKind,
    mode: SpawnMode,
    params: &TaskParams,
    rng: &mut R,
) -> RigidState {
    let (lo, hi) = match mode {
        SpawnMode::Train => params.spawn_radius_train,
        SpawnMode::Eval => params.spawn_radius_eval,
    };
    let radius = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    match kind.dof() {
        Dof::Three => {
            let polar: f64 = rng.random_range(-PI..PI);
            let heading: f64 = rng.random_range(-PI..PI);
            RigidState::planar(radius * polar.cos(), radius * polar.sin(), heading)
        }
        Dof::Six => {
            let position = uniform_direction(rng) * radius;
            RigidState::at_rest(position, UnitQuaternion::random(rng))
        }
    }
}

/// Writes the kind's task data into `out` (`td_slots` long), zero-filling
/// unused slots.
pub fn write_task_data(kind: TaskKind, state: &RigidState, goal: &TaskGoal, out: &mut [f64]) -> Result<(), TaskError> {
    goal.check(kind)?;
    if out.len() != kind.td_slots() {
        return Err(TaskError::ObservationLength {
            expected: kind.td_slots(),
            got: out.len(),
        });
    }
    out.fill(0.0);
    let p = &state.position;
    let v = &state.lin_vel;
    match *goal {
        TaskGoal::Position2D { target } => {
            out[0] = target[0] - p.x;
            out[1] = target[1] - p.y;
        }
        TaskGoal::Pose2D { target, heading } => {
            out[0] = target[0] - p.x;
            out[1] = target[1] - p.y;
            let d = heading_delta(Heading::new(state.orientation.heading()), Heading::new(heading));
            let (s, c) = d.sin_cos();
            out[2] = c;
            out[3] = s;
        }
        TaskGoal::Velocity2D { velocity } => {
            out[0] = velocity[0] - v.x;
            out[1] = velocity[1] - v.y;
        }
        TaskGoal::VelocityOmega2D { velocity, omega } => {
            out[0] = velocity[0] - v.x;
            out[1] = velocity[1] - v.y;
            out[2] = omega - state.ang_vel.z;
        }
        TaskGoal::Position3D { target } => {
            out[..3].copy_from_slice((target - p).as_slice());
        }
        TaskGoal::Pose3D { target, rotation } => {
            out[..3].copy_from_slice((target - p).as_slice());
            let dr = relative_rotation(&state.orientation.to_rotation_matrix(), &rotation);
            for (k, slot) in out[3..9].iter_mut().enumerate() {
                *slot = dr.get(k / 3, k % 3);
            }
        }
        TaskGoal::Velocity3D { velocity } => {
            out[..3].copy_from_slice((velocity - v).as_slice());
        }
    }
    Ok(())
}

/// The kind's `td` values without zero padding.
pub fn task_data(kind: TaskKind, state: &RigidState, goal: &TaskGoal) -> Result<Vec<f64>, TaskError> {
    let mut buf = vec![0.0; kind.td_slots()];
    write_task_data(kind, state, goal, &mut buf)?;
    buf.truncate(kind.td_len());
    Ok(buf)
}

/// Flat observation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Assembles the observation into `out` (`obs_dim` long).
pub fn observe_into(kind: TaskKind, state: &RigidState, goal: &TaskGoal, out: &mut [f64]) -> Result<(), TaskError> {
    if out.len() != kind.obs_dim() {
        return Err(TaskError::ObservationLength {
            expected: kind.obs_dim(),
            got: out.len(),
        });
    }
    match kind.dof() {
        Dof::Three => {
            let [c, s] = Heading::new(state.orientation.heading()).encode();
            out[0] = c;
            out[1] = s;
            out[2] = state.lin_vel.x;
            out[3] = state.lin_vel.y;
            out[4] = state.ang_vel.z;
            out[5] = kind.task_flag();
            write_task_data(kind, state, goal, &mut out[6..10])
        }
        Dof::Six => {
            let r = state.orientation.to_rotation_matrix();
            out[..6].copy_from_slice(rotmat_to_sixd(&r).as_slice());
            out[6..9].copy_from_slice(state.lin_vel.as_slice());
            out[9..12].copy_from_slice((r.0 * state.ang_vel).as_slice());
            out[12] = kind.task_flag();
            write_task_data(kind, state, goal, &mut out[13..22])
        }
    }
}

pub fn observe(kind: TaskKind, state: &RigidState, goal: &TaskGoal) -> Result<Observation, TaskError> {
    let mut buf = vec![0.0; kind.obs_dim()];
    observe_into(kind, state, goal, &mut buf)?;
    Ok(Observation(buf))
}

/// Per-step reward after the transition into `state_next`.
///
/// Each shaping term lies in `[0, 1]`; the action penalty is
/// `action_cost · fired / n`.
pub fn reward(kind: TaskKind, state_next: &RigidState, goal: &TaskGoal, action: &[bool], params: &RewardParams) -> f64 {
    debug_assert_eq!(goal.kind(), kind);
    let fired = action.iter().filter(|&&b| b).count() as f64;
    let penalty = if action.is_empty() {
        0.0
    } else {
        params.action_cost * fired / action.len() as f64
    };
    let kernel = |err: f64, sigma: f64| (-err / sigma).exp();
    let shaped = match kind.family() {
        TaskFamily::Position => kernel(goal.position_error(state_next).unwrap_or(0.0), params.sigma_position),
        TaskFamily::Pose => {
            0.5 * kernel(goal.position_error(state_next).unwrap_or(0.0), params.sigma_position)
                + 0.5 * kernel(goal.rotation_error(state_next).unwrap_or(0.0), params.sigma_rotation)
        }
        TaskFamily::Velocity => {
            let lin = kernel(goal.velocity_error(state_next).unwrap_or(0.0), params.sigma_velocity);
            match goal.omega_error(state_next) {
                Some(w) => 0.5 * lin + 0.5 * kernel(w, params.sigma_omega),
                None => lin,
            }
        }
    };
    shaped - penalty
}

/// Termination check after `step_index` control steps of an episode.
pub fn episode_done(
    step_index: u32,
    state: &RigidState,
    goal: &TaskGoal,
    limits: &EpisodeLimits,
) -> Option<DoneReason> {
    if !state.is_finite() {
        return Some(DoneReason::OutOfBounds);
    }
    if let Some(d) = goal.position_error(state) {
        if d > limits.out_of_bounds {
            return Some(DoneReason::OutOfBounds);
        }
    }
    if step_index >= limits.horizon {
        return Some(DoneReason::Horizon);
    }
    None
}
