//! Look-ahead path follower for the planar velocity-tracking task.
//!
//! Each control step picks the farthest path point within the look-ahead
//! radius (or the closest point when none is inside), points a cruise-speed
//! velocity command at it and hands that command to a velocity tracker.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use rand_chacha::ChaCha8Rng;

use crate::agent::{greedy_actions, policy_forward, sample_actions, PolicyNet};
use crate::config::{PlannerSection, RunConfig};
use crate::dynamics::RigidState;
use crate::error::{AgentError, PlannerError};
use crate::tasks::{SpawnMode, TaskKind};
use crate::vecenv::VecEnv;

/// Below this distance the command degenerates to zero.
pub const COINCIDENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    points: Vec<Vector2<f64>>,
    closed: bool,
}

impl ReferencePath {
    pub fn new(points: Vec<Vector2<f64>>, closed: bool) -> Result<Self, PlannerError> {
        if points.len() < 2 {
            return Err(PlannerError::ParamInvalid(format!(
                "a path needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(PlannerError::ParamInvalid("path points must be finite".into()));
        }
        Ok(Self { points, closed })
    }

    pub fn points(&self) -> &[Vector2<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn max_spacing(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathShape {
    Circle,
    Spiral,
    Square,
}

impl PathShape {
    pub const ALL: [PathShape; 3] = [PathShape::Circle, PathShape::Spiral, PathShape::Square];

    pub fn name(self) -> &'static str {
        match self {
            PathShape::Circle => "circle",
            PathShape::Spiral => "spiral",
            PathShape::Square => "square",
        }
    }
}

impl fmt::Display for PathShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PathShape {
    type Err = PlannerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PathShape::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                PlannerError::ParamInvalid(format!("unknown shape {s:?}; expected circle, spiral or square"))
            })
    }
}

/// Highest-index point within `radius` of `pos`; failing that, the closest
/// point (lowest index on ties).
pub fn lookahead_point(points: &[Vector2<f64>], pos: Vector2<f64>, radius: f64) -> (Vector2<f64>, usize) {
    assert!(!points.is_empty(), "empty path");
    if let Some(i) = points.iter().rposition(|p| (p - pos).norm() <= radius) {
        return (points[i], i);
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = (p - pos).norm();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    (points[best], best)
}

/// `cruise · (target − pos)/‖target − pos‖`, or zero when the two coincide.
pub fn velocity_command(target: Vector2<f64>, pos: Vector2<f64>, cruise: f64) -> Vector2<f64> {
    let d = target - pos;
    let n = d.norm();
    if n < COINCIDENT_TOL {
        Vector2::zeros()
    } else {
        d * (cruise / n)
    }
}

pub fn gen_path(shape: PathShape, params: &PlannerSection) -> Result<ReferencePath, PlannerError> {
    let spacing = params.spacing;
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(PlannerError::ParamInvalid(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    if spacing > params.lookahead_radius {
        return Err(PlannerError::ParamInvalid(format!(
            "spacing {spacing} exceeds the look-ahead radius {}",
            params.lookahead_radius
        )));
    }
    match shape {
        PathShape::Circle => circle(params.circle_radius, spacing),
        PathShape::Spiral => spiral(
            params.spiral_start_radius,
            params.spiral_growth,
            params.spiral_end_radius,
            spacing,
        ),
        PathShape::Square => square(params.square_side, spacing),
    }
}

fn circle(radius: f64, spacing: f64) -> Result<ReferencePath, PlannerError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(PlannerError::ParamInvalid(format!(
            "circle radius must be positive, got {radius}"
        )));
    }
    let n = (2.0 * PI * radius / spacing).ceil().max(3.0) as usize;
    let points = (0..=n)
        .map(|k| {
            let a = if k == n { 0.0 } else { 2.0 * PI * k as f64 / n as f64 };
            Vector2::new(radius * a.cos(), radius * a.sin())
        })
        .collect();
    ReferencePath::new(points, true)
}

fn spiral(r0: f64, growth: f64, r_end: f64, spacing: f64) -> Result<ReferencePath, PlannerError> {
    if !(r0 >= 0.0 && growth > 0.0 && r_end > r0 && r_end.is_finite()) {
        return Err(PlannerError::ParamInvalid(format!(
            "spiral needs 0 ≤ start < end and positive growth, got start {r0}, growth {growth}, end {r_end}"
        )));
    }
    let at = |phi: f64| {
        let r = r0 + growth * phi;
        Vector2::new(r * phi.cos(), r * phi.sin())
    };
    let phi_end = (r_end - r0) / growth;
    let mut points = vec![at(0.0)];
    let mut phi = 0.0;
    loop {
        // Over one step r grows by less than `spacing`, so the arc length
        // (and with it the chord) stays within `spacing`.
        let r = r0 + growth * phi;
        phi += spacing / ((r + spacing).powi(2) + growth * growth).sqrt();
        if phi >= phi_end {
            break;
        }
        points.push(at(phi));
    }
    points.push(at(phi_end));
    ReferencePath::new(points, false)
}

fn square(side: f64, spacing: f64) -> Result<ReferencePath, PlannerError> {
    if !(side > 0.0 && side.is_finite()) {
        return Err(PlannerError::ParamInvalid(format!(
            "square side must be positive, got {side}"
        )));
    }
    let h = side / 2.0;
    let corners = [
        Vector2::new(-h, -h),
        Vector2::new(h, -h),
        Vector2::new(h, h),
        Vector2::new(-h, h),
    ];
    let n = (side / spacing).ceil() as usize;
    let mut points = Vec::with_capacity(4 * n + 1);
    for c in 0..4 {
        let (a, b) = (corners[c], corners[(c + 1) % 4]);
        for k in 0..n {
            let t = k as f64 / n as f64;
            // Along an edge only one coordinate moves; copy the other exactly.
            let p = if a.x == b.x {
                Vector2::new(a.x, a.y + (b.y - a.y) * t)
            } else {
                Vector2::new(a.x + (b.x - a.x) * t, a.y)
            };
            points.push(p);
        }
    }
    points.push(corners[0]);
    ReferencePath::new(points, true)
}

/// Something that turns a planar velocity command into motion.
pub trait VelocityTracker {
    /// Places the craft at rest at `position`.
    fn reset(&mut self, position: Vector2<f64>) -> Result<(), AgentError>;
    /// Applies `command` for one control step; returns the new position and
    /// velocity.
    fn step(&mut self, command: Vector2<f64>) -> Result<(Vector2<f64>, Vector2<f64>), AgentError>;
    /// Control period, s.
    fn dt(&self) -> f64;
}

/// Ideal tracker: velocity equals the command and the position drifts with it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedTracker {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub control_dt: f64,
}

impl ScriptedTracker {
    pub fn new(control_dt: f64) -> Self {
        Self {
            position: Vector2::zeros(),
            velocity: Vector2::zeros(),
            control_dt,
        }
    }
}

impl VelocityTracker for ScriptedTracker {
    fn reset(&mut self, position: Vector2<f64>) -> Result<(), AgentError> {
        self.position = position;
        self.velocity = Vector2::zeros();
        Ok(())
    }

    fn step(&mut self, command: Vector2<f64>) -> Result<(Vector2<f64>, Vector2<f64>), AgentError> {
        self.velocity = command;
        self.position += command * self.control_dt;
        Ok((self.position, self.velocity))
    }

    fn dt(&self) -> f64 {
        self.control_dt
    }
}

/// A trained TrackXYVelocity policy driving one simulated platform.
pub struct PolicyTracker {
    net: PolicyNet,
    env: VecEnv,
    /// Sampled actions when set; per-head argmax otherwise.
    sampler: Option<ChaCha8Rng>,
}

impl PolicyTracker {
    /// The episode limit is lifted to cover `max_steps` so that the run is
    /// never reset midway.
    pub fn new(
        net: PolicyNet,
        config: &RunConfig,
        seed: u64,
        max_steps: usize,
        stochastic: bool,
    ) -> Result<Self, AgentError> {
        if config.task.kind != TaskKind::TrackXYVelocity {
            return Err(AgentError::Checkpoint(format!(
                "path following needs a trackxyvelocity policy, got {}",
                config.task.kind
            )));
        }
        let mut env_cfg = config
            .env_config(SpawnMode::Eval)
            .map_err(|e| AgentError::InvalidHyperparams(e.message))?;
        if net.obs_dim() != env_cfg.obs_dim() || net.n_heads() != env_cfg.n_actions() {
            return Err(AgentError::ShapeMismatch(format!(
                "policy is {}→{}, task needs {}→{}",
                net.obs_dim(),
                net.n_heads(),
                env_cfg.obs_dim(),
                env_cfg.n_actions()
            )));
        }
        env_cfg.limits.horizon = env_cfg
            .limits
            .horizon
            .max(u32::try_from(max_steps).unwrap_or(u32::MAX - 1) + 1);
        let env = VecEnv::make(env_cfg, 1, seed)?;
        let sampler = stochastic.then(|| crate::agent::train::agent_rng(seed, 3));
        Ok(Self { net, env, sampler })
    }
}

impl VelocityTracker for PolicyTracker {
    fn reset(&mut self, position: Vector2<f64>) -> Result<(), AgentError> {
        self.env.set_state(0, RigidState::planar(position.x, position.y, 0.0))?;
        Ok(())
    }

    fn step(&mut self, command: Vector2<f64>) -> Result<(Vector2<f64>, Vector2<f64>), AgentError> {
        let mut goal = *self.env.goal(0);
        goal.set_target_velocity(Vector3::new(command.x, command.y, 0.0));
        self.env.set_goal(0, goal)?;
        let out = policy_forward(&self.net, self.env.observations())?;
        let bits = match self.sampler.as_mut() {
            Some(rng) => sample_actions(&out.logits, self.net.n_heads(), rng).bits,
            None => greedy_actions(&out.logits),
        };
        self.env.step_batch(&bits)?;
        let s = self.env.state(0);
        Ok((s.position.xy(), s.lin_vel.xy()))
    }

    fn dt(&self) -> f64 {
        self.env.config().control_dt
    }
}

/// One control step of a path-following run, recorded after the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingRow {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub cmd_vx: f64,
    pub cmd_vy: f64,
    pub meas_vx: f64,
    pub meas_vy: f64,
    pub target_index: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackingLog {
    pub rows: Vec<TrackingRow>,
}

pub const TRACKING_HEADER: &str = "step,x,y,cmd_vx,cmd_vy,meas_vx,meas_vy,target_index";

impl TrackingLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mean of `‖v_cmd − v_meas‖` over the run.
    pub fn mean_speed_error(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows
            .iter()
            .map(|r| (r.cmd_vx - r.meas_vx).hypot(r.cmd_vy - r.meas_vy))
            .sum::<f64>()
            / self.rows.len() as f64
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRACKING_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.step, r.x, r.y, r.cmd_vx, r.cmd_vy, r.meas_vx, r.meas_vy, r.target_index
            )?;
        }
        Ok(())
    }
}

/// Runs `steps` control steps from the first path point.
///
/// The look-ahead search covers the points from the last selected index up
/// to an arc length of twice the radius ahead of it, so that the far end of
/// a closed path, which lies next to its start, is not selected early.
pub fn follow<T: VelocityTracker + ?Sized>(
    tracker: &mut T,
    path: &ReferencePath,
    params: &PlannerSection,
    steps: usize,
) -> Result<TrackingLog, AgentError> {
    let pts = path.points();
    let mut log = TrackingLog {
        rows: Vec::with_capacity(steps),
    };
    if steps == 0 {
        return Ok(log);
    }
    tracker.reset(pts[0])?;
    let mut pos = pts[0];
    let mut base = 0usize;
    for step in 0..steps {
        let end = window_end(pts, base, 2.0 * params.lookahead_radius);
        let (target, rel) = lookahead_point(&pts[base..end], pos, params.lookahead_radius);
        let index = base + rel;
        base = index;
        let cmd = velocity_command(target, pos, params.cruise_speed);
        let (p, v) = tracker.step(cmd)?;
        pos = p;
        log.rows.push(TrackingRow {
            step,
            x: p.x,
            y: p.y,
            cmd_vx: cmd.x,
            cmd_vy: cmd.y,
            meas_vx: v.x,
            meas_vy: v.y,
            target_index: index,
        });
    }
    Ok(log)
}

/// One past the last index whose arc length from `start` is within `arc`.
fn window_end(pts: &[Vector2<f64>], start: usize, arc: f64) -> usize {
    let mut s = 0.0;
    let mut end = start + 1;
    while end < pts.len() {
        s += (pts[end] - pts[end - 1]).norm();
        if s > arc {
            break;
        }
        end += 1;
    }
    end
}

/// Steps a perfect tracker needs to traverse `path` at cruise speed, plus a
/// margin for settling on the last point.
pub fn lap_steps(path: &ReferencePath, params: &PlannerSection, control_dt: f64) -> usize {
    let length: f64 = path.points().windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    (length / (params.cruise_speed * control_dt)).ceil() as usize + 20
}
