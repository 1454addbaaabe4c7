//! Run configuration loaded from a sectioned TOML file.
//!
//! One file fully determines a run. Fields whose default depends on the DoF
//! class (spawn radii, hidden layers) are optional and resolved from the task
//! kind. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::PpoHyperparams;
use crate::dynamics::{BodyParams, Dof, ThrusterLayout};
use crate::error::ConfigError;
use crate::tasks::{EpisodeLimits, RewardParams, SpawnMode, TaskKind, TaskParams};
use crate::vecenv::EnvConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BodySection {
    pub mass: f64,
    /// Diagonal of the body inertia tensor, kg·m².
    pub inertia: [f64; 3],
}

impl Default for BodySection {
    fn default() -> Self {
        Self {
            mass: BodyParams::DEFAULT_MASS,
            inertia: BodyParams::DEFAULT_INERTIA_DIAG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThrusterSection {
    pub magnitude: f64,
    /// Body-frame application points. Empty selects the default layout.
    pub points: Vec<[f64; 3]>,
    /// Body-frame unit directions, one per point.
    pub directions: Vec<[f64; 3]>,
}

impl Default for ThrusterSection {
    fn default() -> Self {
        Self {
            magnitude: crate::dynamics::DEFAULT_THRUST,
            points: Vec::new(),
            directions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Agent rate, 5 or 10 Hz.
    pub control_hz: u32,
    /// Physics sub-steps per control step.
    pub substeps: u32,
    /// Episode length in control steps.
    pub horizon: u32,
    /// Distance to the goal that ends a GoTo episode, m.
    pub out_of_bounds: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            control_hz: 10,
            substeps: 10,
            horizon: 500,
            out_of_bounds: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub kind: TaskKind,
    pub goal_speed_max: f64,
    pub goal_omega_max: f64,
    pub spawn_radius_train: Option<[f64; 2]>,
    pub spawn_radius_eval: Option<[f64; 2]>,
    pub reward: RewardParams,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            kind: TaskKind::GoToXY,
            goal_speed_max: 0.5,
            goal_omega_max: 0.5,
            spawn_radius_train: None,
            spawn_radius_eval: None,
            reward: RewardParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoSection {
    pub n_envs: usize,
    pub epochs: usize,
    pub rollout_horizon: usize,
    pub minibatches: usize,
    pub update_epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    /// Hidden layer widths; defaults to `[128, 128]` (3DoF) or
    /// `[256, 256, 256]` (6DoF).
    pub hidden: Option<Vec<usize>>,
    /// Checkpoint period in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for PpoSection {
    fn default() -> Self {
        let hp = PpoHyperparams::default();
        Self {
            n_envs: 256,
            epochs: hp.epochs,
            rollout_horizon: hp.rollout_horizon,
            minibatches: hp.minibatches,
            update_epochs: hp.update_epochs,
            gamma: hp.gamma,
            lambda: hp.lambda,
            clip: hp.clip,
            value_coef: hp.value_coef,
            entropy_coef: hp.entropy_coef,
            learning_rate: hp.learning_rate,
            max_grad_norm: hp.max_grad_norm,
            hidden: None,
            checkpoint_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_envs: usize,
    pub steps: usize,
    pub position_threshold: f64,
    pub attitude_threshold: f64,
    pub velocity_threshold: f64,
    /// Sample actions instead of taking the per-head argmax.
    pub stochastic: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_envs: 1024,
            steps: 500,
            position_threshold: 0.2,
            attitude_threshold: 0.1,
            velocity_threshold: 0.1,
            stochastic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSection {
    pub lookahead_radius: f64,
    pub cruise_speed: f64,
    pub spacing: f64,
    pub circle_radius: f64,
    pub spiral_start_radius: f64,
    pub spiral_growth: f64,
    pub spiral_end_radius: f64,
    pub square_side: f64,
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self {
            lookahead_radius: 0.25,
            cruise_speed: 0.25,
            spacing: 0.05,
            circle_radius: 1.5,
            spiral_start_radius: 0.2,
            spiral_growth: 0.08,
            spiral_end_radius: 2.0,
            square_side: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub body: BodySection,
    pub thrusters: ThrusterSection,
    pub sim: SimSection,
    pub task: TaskSection,
    pub ppo: PpoSection,
    pub eval: EvalSection,
    pub planner: PlannerSection,
}

/// Default values that are choices of this implementation rather than
/// published figures. Written into every run manifest.
pub const IMPLEMENTATION_DEFAULTS: &[&str] = &[
    "body.mass",
    "body.inertia",
    "thrusters.magnitude",
    "thrusters.points",
    "thrusters.directions",
    "sim.out_of_bounds",
    "task.goal_speed_max",
    "task.goal_omega_max",
    "task.spawn_radius_train",
    "task.reward",
    "ppo.rollout_horizon",
    "ppo.minibatches",
    "ppo.update_epochs",
    "ppo.gamma",
    "ppo.lambda",
    "ppo.clip",
    "ppo.value_coef",
    "ppo.entropy_coef",
    "ppo.learning_rate",
    "ppo.max_grad_norm",
    "eval.position_threshold",
    "eval.attitude_threshold",
    "eval.velocity_threshold",
    "planner.spacing",
    "planner.circle_radius",
    "planner.spiral_start_radius",
    "planner.spiral_growth",
    "planner.spiral_end_radius",
    "planner.square_side",
];

impl RunConfig {
    /// Defaults for `kind`.
    pub fn for_task(kind: TaskKind) -> Self {
        let mut cfg = Self::default();
        cfg.task.kind = kind;
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            let msg = match line {
                Some(l) => format!("line {l}: {}", e.message()),
                None => e.message().to_string(),
            };
            ConfigError { message: msg, line }
        })?;
        cfg.validate_with_source(Some(text))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|mut e| {
            e.message = format!("{}: {}", path.display(), e.message);
            e
        })
    }

    pub fn dof(&self) -> Dof {
        self.task.kind.dof()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_with_source(None)
    }

    fn validate_with_source(&self, text: Option<&str>) -> Result<(), ConfigError> {
        let fail = |section: &str, key: &str, msg: String| {
            let line = text.and_then(|t| locate_key(t, section, key));
            let message = match line {
                Some(l) => format!("line {l}: [{section}] {key}: {msg}"),
                None => format!("[{section}] {key}: {msg}"),
            };
            Err(ConfigError { message, line })
        };
        let positive = |v: f64| v > 0.0 && v.is_finite();

        if !positive(self.body.mass) {
            return fail("body", "mass", format!("must be positive, got {}", self.body.mass));
        }
        if let Err(e) = BodyParams::diagonal(self.body.mass, self.body.inertia) {
            return fail("body", "inertia", e.to_string());
        }
        if self.thrusters.points.len() != self.thrusters.directions.len() {
            return fail(
                "thrusters",
                "directions",
                format!(
                    "{} directions for {} points",
                    self.thrusters.directions.len(),
                    self.thrusters.points.len()
                ),
            );
        }
        match self.layout() {
            Ok(layout) => {
                if let Err(e) = layout.validate_for(self.dof()) {
                    return fail("thrusters", "points", e.to_string());
                }
            }
            Err(e) => return fail("thrusters", "magnitude", e.message),
        }
        if ![5, 10].contains(&self.sim.control_hz) {
            return fail(
                "sim",
                "control_hz",
                format!("must be 5 or 10, got {}", self.sim.control_hz),
            );
        }
        if self.sim.substeps == 0 {
            return fail("sim", "substeps", "must be at least 1".into());
        }
        if self.sim.horizon == 0 {
            return fail("sim", "horizon", "must be at least 1".into());
        }
        if !positive(self.sim.out_of_bounds) {
            return fail("sim", "out_of_bounds", "must be positive".into());
        }
        if !(self.task.goal_speed_max >= 0.0) {
            return fail("task", "goal_speed_max", "must be non-negative".into());
        }
        if !(self.task.goal_omega_max >= 0.0) {
            return fail("task", "goal_omega_max", "must be non-negative".into());
        }
        for (key, range) in [
            ("spawn_radius_train", self.task.spawn_radius_train),
            ("spawn_radius_eval", self.task.spawn_radius_eval),
        ] {
            if let Some([lo, hi]) = range {
                if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                    return fail("task", key, format!("[{lo}, {hi}] is not a valid radius range"));
                }
            }
        }
        let r = &self.task.reward;
        for (key, v) in [
            ("sigma_position", r.sigma_position),
            ("sigma_rotation", r.sigma_rotation),
            ("sigma_velocity", r.sigma_velocity),
            ("sigma_omega", r.sigma_omega),
        ] {
            if !positive(v) {
                return fail("task.reward", key, format!("must be positive, got {v}"));
            }
        }
        if !(r.action_cost >= 0.0) {
            return fail("task.reward", "action_cost", "must be non-negative".into());
        }
        let p = &self.ppo;
        if p.n_envs == 0 {
            return fail("ppo", "n_envs", "must be at least 1".into());
        }
        if p.rollout_horizon == 0 {
            return fail("ppo", "rollout_horizon", "must be at least 1".into());
        }
        if p.minibatches == 0 || p.minibatches > p.n_envs * p.rollout_horizon {
            return fail(
                "ppo",
                "minibatches",
                "must be between 1 and n_envs × rollout_horizon".into(),
            );
        }
        if p.update_epochs == 0 {
            return fail("ppo", "update_epochs", "must be at least 1".into());
        }
        if let Err(e) = self.ppo_hyperparams().validate() {
            let key = e.to_string();
            let key = [
                "gamma",
                "lambda",
                "clip",
                "learning_rate",
                "max_grad_norm",
                "value_coef",
                "entropy_coef",
            ]
            .into_iter()
            .find(|k| key.contains(k))
            .unwrap_or("gamma");
            return fail("ppo", key, e.to_string());
        }
        if let Some(h) = &p.hidden {
            if h.contains(&0) {
                return fail("ppo", "hidden", "layer widths must be positive".into());
            }
        }
        let e = &self.eval;
        if e.n_envs == 0 {
            return fail("eval", "n_envs", "must be at least 1".into());
        }
        if e.steps == 0 {
            return fail("eval", "steps", "must be at least 1".into());
        }
        for (key, v) in [
            ("position_threshold", e.position_threshold),
            ("attitude_threshold", e.attitude_threshold),
            ("velocity_threshold", e.velocity_threshold),
        ] {
            if !positive(v) {
                return fail("eval", key, "must be positive".into());
            }
        }
        let pl = &self.planner;
        for (key, v) in [
            ("lookahead_radius", pl.lookahead_radius),
            ("cruise_speed", pl.cruise_speed),
            ("spacing", pl.spacing),
            ("circle_radius", pl.circle_radius),
            ("spiral_start_radius", pl.spiral_start_radius),
            ("spiral_growth", pl.spiral_growth),
            ("spiral_end_radius", pl.spiral_end_radius),
            ("square_side", pl.square_side),
        ] {
            if !positive(v) {
                return fail("planner", key, "must be positive".into());
            }
        }
        if pl.spacing > pl.lookahead_radius {
            return fail("planner", "spacing", "must not exceed lookahead_radius".into());
        }
        if pl.spiral_end_radius <= pl.spiral_start_radius {
            return fail("planner", "spiral_end_radius", "must exceed spiral_start_radius".into());
        }
        Ok(())
    }

    pub fn body(&self) -> Result<BodyParams, ConfigError> {
        BodyParams::diagonal(self.body.mass, self.body.inertia).map_err(|e| ConfigError::new(e.to_string()))
    }

    pub fn layout(&self) -> Result<ThrusterLayout, ConfigError> {
        let t = &self.thrusters;
        let (points, directions) = if t.points.is_empty() {
            let d = ThrusterLayout::default_for(self.dof());
            (d.points().to_vec(), d.directions().to_vec())
        } else {
            (
                t.points.iter().map(|p| Vector3::from(*p)).collect(),
                t.directions.iter().map(|d| Vector3::from(*d)).collect(),
            )
        };
        ThrusterLayout::new(points, directions, t.magnitude).map_err(|e| ConfigError::new(e.to_string()))
    }

    pub fn task_params(&self) -> TaskParams {
        let mut p = TaskParams::default_for(self.dof());
        p.goal_speed_max = self.task.goal_speed_max;
        p.goal_omega_max = self.task.goal_omega_max;
        if let Some([lo, hi]) = self.task.spawn_radius_train {
            p.spawn_radius_train = (lo, hi);
        }
        if let Some([lo, hi]) = self.task.spawn_radius_eval {
            p.spawn_radius_eval = (lo, hi);
        }
        p.reward = self.task.reward;
        p
    }

    pub fn env_config(&self, spawn: SpawnMode) -> Result<EnvConfig, ConfigError> {
        Ok(EnvConfig {
            kind: self.task.kind,
            body: self.body()?,
            layout: self.layout()?,
            control_dt: 1.0 / f64::from(self.sim.control_hz),
            substeps: self.sim.substeps,
            limits: EpisodeLimits {
                horizon: self.sim.horizon,
                out_of_bounds: self.sim.out_of_bounds,
            },
            task: self.task_params(),
            spawn,
        })
    }

    pub fn hidden_layers(&self) -> Vec<usize> {
        self.ppo.hidden.clone().unwrap_or_else(|| match self.dof() {
            Dof::Three => vec![128, 128],
            Dof::Six => vec![256, 256, 256],
        })
    }

    pub fn ppo_hyperparams(&self) -> PpoHyperparams {
        let p = &self.ppo;
        PpoHyperparams {
            epochs: p.epochs,
            rollout_horizon: p.rollout_horizon,
            minibatches: p.minibatches,
            update_epochs: p.update_epochs,
            gamma: p.gamma,
            lambda: p.lambda,
            clip: p.clip,
            value_coef: p.value_coef,
            entropy_coef: p.entropy_coef,
            learning_rate: p.learning_rate,
            max_grad_norm: p.max_grad_norm,
        }
    }

    /// Copy with every DoF-dependent default made explicit.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let tp = self.task_params();
        c.task.spawn_radius_train = Some([tp.spawn_radius_train.0, tp.spawn_radius_train.1]);
        c.task.spawn_radius_eval = Some([tp.spawn_radius_eval.0, tp.spawn_radius_eval.1]);
        c.ppo.hidden = Some(self.hidden_layers());
        if c.thrusters.points.is_empty() {
            let d = ThrusterLayout::default_for(self.dof());
            c.thrusters.points = d.points().iter().map(|p| [p.x, p.y, p.z]).collect();
            c.thrusters.directions = d.directions().iter().map(|p| [p.x, p.y, p.z]).collect();
        }
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the resolved config.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.resolved().to_toml().as_bytes());
        let mut s = String::with_capacity(16);
        for b in &digest[..8] {
            let _ = write!(s, "{b:02x}");
        }
        s
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// 1-based line of `key` inside `[section]`, if present in the source.
fn locate_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}
