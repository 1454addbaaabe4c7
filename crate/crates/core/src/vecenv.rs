//! Lockstep batch of independent environments.
//!
//! Per-environment state is stored field by field (one contiguous sequence
//! per field). Each environment owns a counter-based random stream derived
//! from the master seed and its index, so results do not depend on how the
//! batch is partitioned across workers.

use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dynamics::{self, BodyParams, Dof, RigidState, ThrusterLayout};
use crate::error::{DynamicsError, EnvError};
use crate::geom::UnitQuaternion;
use crate::tasks::{
    episode_done, observe_into, reward, sample_goal, sample_initial_state, DoneReason, EpisodeLimits, SpawnMode,
    TaskGoal, TaskKind, TaskParams,
};

/// Smallest number of environments handed to one worker at a time.
const MIN_SHARD: usize = 64;

/// Fully resolved parameters of one environment family.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub kind: TaskKind,
    pub body: BodyParams,
    pub layout: ThrusterLayout,
    pub control_dt: f64,
    pub substeps: u32,
    pub limits: EpisodeLimits,
    pub task: TaskParams,
    pub spawn: SpawnMode,
}

impl EnvConfig {
    /// Defaults for `kind`: default body and layout, 10 Hz control with 10
    /// physics sub-steps, 500-step horizon, training spawns.
    pub fn default_for(kind: TaskKind) -> Self {
        let dof = kind.dof();
        Self {
            kind,
            body: BodyParams::default(),
            layout: ThrusterLayout::default_for(dof),
            control_dt: 0.1,
            substeps: 10,
            limits: EpisodeLimits::default(),
            task: TaskParams::default_for(dof),
            spawn: SpawnMode::Train,
        }
    }

    pub fn dof(&self) -> Dof {
        self.kind.dof()
    }

    pub fn obs_dim(&self) -> usize {
        self.kind.obs_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.layout.len()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::ConfigInvalid(m));
        if let Err(e) = self.layout.validate_for(self.dof()) {
            return bad(e.to_string());
        }
        if !(self.control_dt > 0.0 && self.control_dt.is_finite()) {
            return bad(format!("control period must be positive, got {}", self.control_dt));
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1".into());
        }
        if self.limits.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.limits.out_of_bounds > 0.0) {
            return bad("out-of-bounds distance must be positive".into());
        }
        for (name, (lo, hi)) in [
            ("train", self.task.spawn_radius_train),
            ("eval", self.task.spawn_radius_eval),
        ] {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return bad(format!("{name} spawn radius range [{lo}, {hi}] is invalid"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct EpisodeCounter {
    steps: u32,
    ret: f64,
}

/// Result of one lockstep step. Row `i` of every field belongs to env `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    pub obs_dim: usize,
    /// Post-step observations; after a done these start the new episode.
    pub observations: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub reasons: Vec<Option<DoneReason>>,
    /// Last observation of each finished episode (valid where `dones[i]`).
    pub terminal_observations: Vec<f64>,
    /// Undiscounted return of each finished episode (valid where `dones[i]`).
    pub episode_returns: Vec<f64>,
    /// Length of each finished episode (valid where `dones[i]`).
    pub episode_lengths: Vec<u32>,
}

impl StepBatch {
    fn new(n_envs: usize, obs_dim: usize) -> Self {
        Self {
            obs_dim,
            observations: vec![0.0; n_envs * obs_dim],
            rewards: vec![0.0; n_envs],
            dones: vec![false; n_envs],
            reasons: vec![None; n_envs],
            terminal_observations: vec![0.0; n_envs * obs_dim],
            episode_returns: vec![0.0; n_envs],
            episode_lengths: vec![0; n_envs],
        }
    }

    pub fn n_envs(&self) -> usize {
        self.rewards.len()
    }

    pub fn observation(&self, env: usize) -> &[f64] {
        &self.observations[env * self.obs_dim..(env + 1) * self.obs_dim]
    }

    pub fn terminal_observation(&self, env: usize) -> Option<&[f64]> {
        self.dones[env].then(|| &self.terminal_observations[env * self.obs_dim..(env + 1) * self.obs_dim])
    }

    /// Environments that auto-reset during this step.
    pub fn reset_mask(&self) -> &[bool] {
        &self.dones
    }
}

/// A batch of `n_envs` environments stepped in lockstep.
pub struct VecEnv {
    cfg: EnvConfig,
    n_envs: usize,
    positions: Vec<Vector3<f64>>,
    orientations: Vec<UnitQuaternion>,
    lin_vels: Vec<Vector3<f64>>,
    ang_vels: Vec<Vector3<f64>>,
    goals: Vec<TaskGoal>,
    counters: Vec<EpisodeCounter>,
    rngs: Vec<ChaCha8Rng>,
    batch: StepBatch,
    pool: Option<rayon::ThreadPool>,
    workers: usize,
}

/// Stream `env` of the master seed.
pub fn child_rng(master_seed: u64, env: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(env as u64);
    rng
}

impl VecEnv {
    /// Builds and resets `n_envs` environments, single-threaded.
    pub fn make(cfg: EnvConfig, n_envs: usize, master_seed: u64) -> Result<Self, EnvError> {
        Self::with_workers(cfg, n_envs, master_seed, 1)
    }

    /// Like [`VecEnv::make`] with a pool of `workers` threads for stepping.
    pub fn with_workers(cfg: EnvConfig, n_envs: usize, master_seed: u64, workers: usize) -> Result<Self, EnvError> {
        if n_envs == 0 {
            return Err(EnvError::ConfigInvalid("n_envs must be at least 1".into()));
        }
        cfg.validate()?;
        let workers = workers.max(1);
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| EnvError::ConfigInvalid(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        let obs_dim = cfg.obs_dim();
        let mut env = Self {
            n_envs,
            positions: vec![Vector3::zeros(); n_envs],
            orientations: vec![UnitQuaternion::identity(); n_envs],
            lin_vels: vec![Vector3::zeros(); n_envs],
            ang_vels: vec![Vector3::zeros(); n_envs],
            goals: Vec::with_capacity(n_envs),
            counters: vec![EpisodeCounter::default(); n_envs],
            rngs: (0..n_envs).map(|i| child_rng(master_seed, i)).collect(),
            batch: StepBatch::new(n_envs, obs_dim),
            pool,
            workers,
            cfg,
        };
        for i in 0..n_envs {
            let (goal, state) = spawn(&env.cfg, &mut env.rngs[i]);
            env.goals.push(goal);
            env.write_state(i, &state);
            observe_into(
                env.cfg.kind,
                &state,
                &goal,
                &mut env.batch.observations[i * obs_dim..(i + 1) * obs_dim],
            )?;
        }
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn n_envs(&self) -> usize {
        self.n_envs
    }

    pub fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.cfg.n_actions()
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Current observations, `n_envs × obs_dim`.
    pub fn observations(&self) -> &[f64] {
        &self.batch.observations
    }

    pub fn last_batch(&self) -> &StepBatch {
        &self.batch
    }

    pub fn state(&self, env: usize) -> RigidState {
        RigidState {
            position: self.positions[env],
            orientation: self.orientations[env],
            lin_vel: self.lin_vels[env],
            ang_vel: self.ang_vels[env],
        }
    }

    pub fn goal(&self, env: usize) -> &TaskGoal {
        &self.goals[env]
    }

    pub fn episode_step(&self, env: usize) -> u32 {
        self.counters[env].steps
    }

    fn check_index(&self, env: usize) -> Result<(), EnvError> {
        if env < self.n_envs {
            Ok(())
        } else {
            Err(EnvError::IndexOutOfRange {
                index: env,
                n_envs: self.n_envs,
            })
        }
    }

    fn write_state(&mut self, env: usize, s: &RigidState) {
        self.positions[env] = s.position;
        self.orientations[env] = s.orientation;
        self.lin_vels[env] = s.lin_vel;
        self.ang_vels[env] = s.ang_vel;
    }

    fn refresh_observation(&mut self, env: usize) -> Result<(), EnvError> {
        let d = self.obs_dim();
        let state = self.state(env);
        observe_into(
            self.cfg.kind,
            &state,
            &self.goals[env],
            &mut self.batch.observations[env * d..(env + 1) * d],
        )?;
        Ok(())
    }

    /// Overwrites the state of one environment and refreshes its observation.
    pub fn set_state(&mut self, env: usize, state: RigidState) -> Result<(), EnvError> {
        self.check_index(env)?;
        let state = match self.cfg.dof() {
            Dof::Three => RigidState {
                position: Vector3::new(state.position.x, state.position.y, 0.0),
                orientation: UnitQuaternion::from_heading(state.orientation.heading()),
                lin_vel: Vector3::new(state.lin_vel.x, state.lin_vel.y, 0.0),
                ang_vel: Vector3::new(0.0, 0.0, state.ang_vel.z),
            },
            Dof::Six => state,
        };
        self.write_state(env, &state);
        self.refresh_observation(env)
    }

    /// Replaces the goal of one environment and refreshes its observation.
    pub fn set_goal(&mut self, env: usize, goal: TaskGoal) -> Result<(), EnvError> {
        self.check_index(env)?;
        if goal.kind() != self.cfg.kind {
            return Err(crate::error::TaskError::KindMismatch {
                task: self.cfg.kind.name(),
                goal: goal.kind().name(),
            }
            .into());
        }
        self.goals[env] = goal;
        self.refresh_observation(env)
    }

    /// Advances every environment by one control step. `actions` is
    /// `n_envs × n_actions`, row-major.
    pub fn step_batch(&mut self, actions: &[bool]) -> Result<&StepBatch, EnvError> {
        let n_act = self.n_actions();
        if actions.len() != self.n_envs * n_act {
            return Err(EnvError::ShapeMismatch {
                expected: self.n_envs * n_act,
                got: actions.len(),
            });
        }
        let obs_dim = self.obs_dim();
        let shard_len = if self.pool.is_some() {
            self.n_envs.div_ceil(self.workers * 4).max(MIN_SHARD)
        } else {
            self.n_envs
        };
        let cfg = &self.cfg;
        let mut shards = Vec::with_capacity(self.n_envs.div_ceil(shard_len));
        let mut rest = Shard {
            obs_dim,
            n_act,
            positions: &mut self.positions,
            orientations: &mut self.orientations,
            lin_vels: &mut self.lin_vels,
            ang_vels: &mut self.ang_vels,
            goals: &mut self.goals,
            counters: &mut self.counters,
            rngs: &mut self.rngs,
            actions,
            batch: BatchSlices {
                observations: &mut self.batch.observations,
                rewards: &mut self.batch.rewards,
                dones: &mut self.batch.dones,
                reasons: &mut self.batch.reasons,
                terminal_observations: &mut self.batch.terminal_observations,
                episode_returns: &mut self.batch.episode_returns,
                episode_lengths: &mut self.batch.episode_lengths,
            },
        };
        while rest.len() > shard_len {
            let (head, tail) = rest.split_at(shard_len);
            shards.push(head);
            rest = tail;
        }
        shards.push(rest);
        match &self.pool {
            Some(pool) => pool.install(|| shards.into_par_iter().try_for_each(|s| s.run(cfg)))?,
            None => shards.into_iter().try_for_each(|s| s.run(cfg))?,
        }
        Ok(&self.batch)
    }
}

fn spawn(cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> (TaskGoal, RigidState) {
    let goal = sample_goal(cfg.kind, &cfg.task, rng);
    let state = sample_initial_state(cfg.kind, cfg.spawn, &cfg.task, rng);
    (goal, state)
}

struct BatchSlices<'a> {
    observations: &'a mut [f64],
    rewards: &'a mut [f64],
    dones: &'a mut [bool],
    reasons: &'a mut [Option<DoneReason>],
    terminal_observations: &'a mut [f64],
    episode_returns: &'a mut [f64],
    episode_lengths: &'a mut [u32],
}

/// Disjoint mutable view over a contiguous range of environments.
struct Shard<'a> {
    obs_dim: usize,
    n_act: usize,
    positions: &'a mut [Vector3<f64>],
    orientations: &'a mut [UnitQuaternion],
    lin_vels: &'a mut [Vector3<f64>],
    ang_vels: &'a mut [Vector3<f64>],
    goals: &'a mut [TaskGoal],
    counters: &'a mut [EpisodeCounter],
    rngs: &'a mut [ChaCha8Rng],
    actions: &'a [bool],
    batch: BatchSlices<'a>,
}

impl<'a> Shard<'a> {
    fn len(&self) -> usize {
        self.positions.len()
    }

    fn split_at(self, k: usize) -> (Shard<'a>, Shard<'a>) {
        let (d, a) = (self.obs_dim, self.n_act);
        let (p0, p1) = self.positions.split_at_mut(k);
        let (o0, o1) = self.orientations.split_at_mut(k);
        let (l0, l1) = self.lin_vels.split_at_mut(k);
        let (w0, w1) = self.ang_vels.split_at_mut(k);
        let (g0, g1) = self.goals.split_at_mut(k);
        let (c0, c1) = self.counters.split_at_mut(k);
        let (r0, r1) = self.rngs.split_at_mut(k);
        let (a0, a1) = self.actions.split_at(k * a);
        let b = self.batch;
        let (ob0, ob1) = b.observations.split_at_mut(k * d);
        let (rw0, rw1) = b.rewards.split_at_mut(k);
        let (dn0, dn1) = b.dones.split_at_mut(k);
        let (rs0, rs1) = b.reasons.split_at_mut(k);
        let (to0, to1) = b.terminal_observations.split_at_mut(k * d);
        let (er0, er1) = b.episode_returns.split_at_mut(k);
        let (el0, el1) = b.episode_lengths.split_at_mut(k);
        let head = Shard {
            obs_dim: d,
            n_act: a,
            positions: p0,
            orientations: o0,
            lin_vels: l0,
            ang_vels: w0,
            goals: g0,
            counters: c0,
            rngs: r0,
            actions: a0,
            batch: BatchSlices {
                observations: ob0,
                rewards: rw0,
                dones: dn0,
                reasons: rs0,
                terminal_observations: to0,
                episode_returns: er0,
                episode_lengths: el0,
            },
        };
        let tail = Shard {
            obs_dim: d,
            n_act: a,
            positions: p1,
            orientations: o1,
            lin_vels: l1,
            ang_vels: w1,
            goals: g1,
            counters: c1,
            rngs: r1,
            actions: a1,
            batch: BatchSlices {
                observations: ob1,
                rewards: rw1,
                dones: dn1,
                reasons: rs1,
                terminal_observations: to1,
                episode_returns: er1,
                episode_lengths: el1,
            },
        };
        (head, tail)
    }

    fn run(self, cfg: &EnvConfig) -> Result<(), EnvError> {
        let (d, a) = (self.obs_dim, self.n_act);
        let dof = cfg.dof();
        for i in 0..self.len() {
            let action = &self.actions[i * a..(i + 1) * a];
            let before = RigidState {
                position: self.positions[i],
                orientation: self.orientations[i],
                lin_vel: self.lin_vels[i],
                ang_vel: self.ang_vels[i],
            };
            let goal = self.goals[i];
            let counter = &mut self.counters[i];
            let (after, reason) = match dynamics::step(
                &before,
                &cfg.body,
                &cfg.layout,
                action,
                dof,
                cfg.control_dt,
                cfg.substeps,
            ) {
                Ok(s) => {
                    counter.steps += 1;
                    (s, episode_done(counter.steps, &s, &goal, &cfg.limits))
                }
                Err(DynamicsError::NonFiniteState) => {
                    counter.steps += 1;
                    (before, Some(DoneReason::OutOfBounds))
                }
                Err(e) => return Err(EnvError::ConfigInvalid(e.to_string())),
            };
            let r = reward(cfg.kind, &after, &goal, action, &cfg.task.reward);
            counter.ret += r;
            self.batch.rewards[i] = r;
            self.batch.reasons[i] = reason;
            let obs = &mut self.batch.observations[i * d..(i + 1) * d];
            match reason {
                None => {
                    self.batch.dones[i] = false;
                    observe_into(cfg.kind, &after, &goal, obs)?;
                    self.positions[i] = after.position;
                    self.orientations[i] = after.orientation;
                    self.lin_vels[i] = after.lin_vel;
                    self.ang_vels[i] = after.ang_vel;
                }
                Some(_) => {
                    self.batch.dones[i] = true;
                    observe_into(
                        cfg.kind,
                        &after,
                        &goal,
                        &mut self.batch.terminal_observations[i * d..(i + 1) * d],
                    )?;
                    self.batch.episode_returns[i] = counter.ret;
                    self.batch.episode_lengths[i] = counter.steps;
                    *counter = EpisodeCounter::default();
                    let (new_goal, fresh) = spawn(cfg, &mut self.rngs[i]);
                    self.goals[i] = new_goal;
                    self.positions[i] = fresh.position;
                    self.orientations[i] = fresh.orientation;
                    self.lin_vels[i] = fresh.lin_vel;
                    self.ang_vels[i] = fresh.ang_vel;
                    observe_into(cfg.kind, &fresh, &new_goal, obs)?;
                }
            }
        }
        Ok(())
    }
}

/// Throughput measurement of [`VecEnv::step_batch`].
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub config_hash: String,
    pub task: TaskKind,
    pub n_envs: usize,
    pub n_steps: usize,
    pub workers: usize,
    pub control_hz: f64,
    pub substeps: u32,
    pub total_env_steps: u64,
    pub wall_seconds: f64,
    pub env_steps_per_second: f64,
    pub us_per_env_step: f64,
}

impl BenchReport {
    /// Newline-delimited `key=value` text.
    pub fn to_kv(&self) -> String {
        format!(
            "version={}\nconfig_hash={}\ntask={}\nn_envs={}\nn_steps={}\nworkers={}\ncontrol_hz={}\nsubsteps={}\n\
             total_env_steps={}\nwall_seconds={:.6}\nenv_steps_per_second={:.1}\nus_per_env_step={:.4}\n",
            crate::VERSION,
            self.config_hash,
            self.task,
            self.n_envs,
            self.n_steps,
            self.workers,
            self.control_hz,
            self.substeps,
            self.total_env_steps,
            self.wall_seconds,
            self.env_steps_per_second,
            self.us_per_env_step,
        )
    }
}

/// Steps `n_envs` environments `n_steps` times with pseudo-random thruster
/// patterns and reports aggregate throughput.
pub fn bench(config: &RunConfig, n_envs: usize, n_steps: usize, workers: usize) -> Result<BenchReport, EnvError> {
    let cfg = config
        .env_config(SpawnMode::Train)
        .map_err(|e| EnvError::ConfigInvalid(e.to_string()))?;
    let control_hz = 1.0 / cfg.control_dt;
    let substeps = cfg.substeps;
    let task = cfg.kind;
    let mut env = VecEnv::with_workers(cfg, n_envs, 0, workers)?;
    let n_act = env.n_actions();
    const BANK: usize = 257;
    let mut rng = ChaCha8Rng::seed_from_u64(0xbe7c);
    let bank: Vec<bool> = (0..BANK * n_act).map(|_| rng.random()).collect();
    let mut actions = vec![false; n_envs * n_act];
    let start = Instant::now();
    for t in 0..n_steps {
        for (i, row) in actions.chunks_exact_mut(n_act).enumerate() {
            let k = (i * 31 + t * 17) % BANK;
            row.copy_from_slice(&bank[k * n_act..(k + 1) * n_act]);
        }
        env.step_batch(&actions)?;
    }
    let wall = start.elapsed().as_secs_f64();
    let total = (n_envs * n_steps) as u64;
    let (sps, us) = if total > 0 && wall > 0.0 {
        (total as f64 / wall, wall * 1e6 / total as f64)
    } else {
        (0.0, 0.0)
    };
    Ok(BenchReport {
        config_hash: config.hash(),
        task,
        n_envs,
        n_steps,
        workers: env.workers(),
        control_hz,
        substeps,
        total_env_steps: total,
        wall_seconds: wall,
        env_steps_per_second: sps,
        us_per_env_step: us,
    })
}
