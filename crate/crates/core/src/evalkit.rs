//! Batch evaluation: per-step metrics for many parallel episodes, their
//! aggregates and the CSV report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand_chacha::ChaCha8Rng;

use crate::agent::{greedy_actions, policy_forward, sample_actions, PolicyNet};
use crate::config::{RunConfig, IMPLEMENTATION_DEFAULTS};
use crate::error::EvalError;
use crate::tasks::{SpawnMode, TaskKind};
use crate::vecenv::VecEnv;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub n_envs: usize,
    pub steps: usize,
    pub seed: u64,
    /// Sample actions instead of the per-head argmax.
    pub stochastic: bool,
    pub workers: usize,
}

impl EvalOptions {
    /// Sizes and decoding from the `[eval]` section.
    pub fn from_config(cfg: &RunConfig, seed: u64) -> Self {
        Self {
            n_envs: cfg.eval.n_envs,
            steps: cfg.eval.steps,
            seed,
            stochastic: cfg.eval.stochastic,
            workers: 1,
        }
    }
}

/// Per-step series of one metric, `steps × n_envs`, step-major. Entries are
/// NaN where the metric does not apply to the task.
pub type Series = Vec<f64>;

/// Logs of one evaluation run.
///
/// Row `t` describes the state an action was taken from, the action and the
/// reward it earned; step-0 rows therefore hold the spawn configuration. An
/// environment whose episode ends early is inactive for the remaining rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub task: TaskKind,
    pub n_envs: usize,
    pub steps: usize,
    pub n_thrusters: usize,
    /// Position error for GoTo tasks, linear velocity error for tracking tasks.
    pub distance: Series,
    pub rotation_error: Series,
    pub speed: Series,
    pub angular_speed: Series,
    pub reward: Series,
    pub fired: Vec<u32>,
    pub active: Vec<bool>,
    /// World position, `steps × n_envs × 3`.
    pub positions: Vec<f64>,
    /// Recorded steps per environment.
    pub lengths: Vec<usize>,
    pub final_distance: Vec<f64>,
    pub final_rotation_error: Vec<f64>,
    pub final_velocity_error: Vec<f64>,
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub position: f64,
    pub attitude: f64,
    pub velocity: f64,
}

/// Per-environment episode outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub env: usize,
    pub length: usize,
    pub total_reward: f64,
    pub total_actions: u64,
    pub final_distance: f64,
    pub final_rotation_error: f64,
    pub final_velocity_error: f64,
    pub success_position: Option<bool>,
    pub success_attitude: Option<bool>,
    pub success_velocity: Option<bool>,
}

impl EpisodeOutcome {
    /// All applicable success flags hold.
    pub fn success(&self) -> bool {
        [self.success_position, self.success_attitude, self.success_velocity]
            .iter()
            .all(|f| f.unwrap_or(true))
    }
}

impl EpisodeMetrics {
    fn at(&self, t: usize, e: usize) -> usize {
        t * self.n_envs + e
    }

    pub fn episodes(&self) -> Vec<EpisodeOutcome> {
        let th = self.thresholds;
        let below = |v: f64, limit: f64| (!v.is_nan()).then_some(v <= limit);
        (0..self.n_envs)
            .map(|e| {
                let len = self.lengths[e];
                let total_reward = (0..len).map(|t| self.reward[self.at(t, e)]).sum();
                let total_actions = (0..len).map(|t| u64::from(self.fired[self.at(t, e)])).sum();
                let position_task = self.task.family() != crate::tasks::TaskFamily::Velocity;
                EpisodeOutcome {
                    env: e,
                    length: len,
                    total_reward,
                    total_actions,
                    final_distance: self.final_distance[e],
                    final_rotation_error: self.final_rotation_error[e],
                    final_velocity_error: self.final_velocity_error[e],
                    success_position: if position_task {
                        below(self.final_distance[e], th.position)
                    } else {
                        None
                    },
                    success_attitude: below(self.final_rotation_error[e], th.attitude),
                    success_velocity: below(self.final_velocity_error[e], th.velocity),
                }
            })
            .collect()
    }

    /// Fraction of episodes whose final distance is at most `threshold`.
    pub fn success_rate(&self, threshold: f64) -> f64 {
        let hits = self.final_distance.iter().filter(|&&d| d <= threshold).count();
        hits as f64 / self.n_envs.max(1) as f64
    }

    /// Mean over environments of the final distance.
    pub fn mean_final_distance(&self) -> f64 {
        self.final_distance.iter().sum::<f64>() / self.n_envs.max(1) as f64
    }

    pub fn mean_final_rotation_error(&self) -> f64 {
        self.final_rotation_error.iter().sum::<f64>() / self.n_envs.max(1) as f64
    }
}

/// Runs `policy` on `opts.n_envs` eval-mode episodes for `opts.steps` steps.
pub fn run_eval(policy: &PolicyNet, config: &RunConfig, opts: &EvalOptions) -> Result<EpisodeMetrics, EvalError> {
    let mut env_cfg = config
        .env_config(SpawnMode::Eval)
        .map_err(|e| crate::error::EnvError::ConfigInvalid(e.message))?;
    if policy.obs_dim() != env_cfg.obs_dim() || policy.n_heads() != env_cfg.n_actions() {
        return Err(EvalError::PolicyTaskMismatch {
            policy: policy.obs_dim(),
            task: env_cfg.obs_dim(),
        });
    }
    // Lifting the time limit past the run length keeps the final state of
    // every surviving episode observable.
    env_cfg.limits.horizon = env_cfg
        .limits
        .horizon
        .max(u32::try_from(opts.steps).unwrap_or(u32::MAX - 1) + 1);
    let task = env_cfg.kind;
    let (n, steps, n_act) = (opts.n_envs, opts.steps, env_cfg.n_actions());
    let thresholds = Thresholds {
        position: config.eval.position_threshold,
        attitude: config.eval.attitude_threshold,
        velocity: config.eval.velocity_threshold,
    };
    let mut env = VecEnv::with_workers(env_cfg, n, opts.seed, opts.workers)?;
    let mut sampler: ChaCha8Rng = crate::agent::train::agent_rng(opts.seed, 4);
    let s = steps * n;
    let mut m = EpisodeMetrics {
        task,
        n_envs: n,
        steps,
        n_thrusters: n_act,
        distance: vec![f64::NAN; s],
        rotation_error: vec![f64::NAN; s],
        speed: vec![f64::NAN; s],
        angular_speed: vec![f64::NAN; s],
        reward: vec![f64::NAN; s],
        fired: vec![0; s],
        active: vec![false; s],
        positions: vec![f64::NAN; s * 3],
        lengths: vec![0; n],
        final_distance: vec![f64::NAN; n],
        final_rotation_error: vec![f64::NAN; n],
        final_velocity_error: vec![f64::NAN; n],
        thresholds,
    };
    let mut alive = vec![true; n];
    let rot = |v: Option<f64>| v.unwrap_or(f64::NAN);
    for t in 0..steps {
        for e in (0..n).filter(|&e| alive[e]) {
            let st = env.state(e);
            let g = env.goal(e);
            let i = t * n + e;
            m.active[i] = true;
            m.distance[i] = g.primary_error(&st);
            m.rotation_error[i] = rot(g.rotation_error(&st));
            m.speed[i] = st.lin_vel.norm();
            m.angular_speed[i] = st.ang_vel.norm();
            m.positions[3 * i..3 * i + 3].copy_from_slice(st.position.as_slice());
            // Final values default to the last recorded state and are
            // replaced below for episodes that survive the run.
            m.final_distance[e] = m.distance[i];
            m.final_rotation_error[e] = m.rotation_error[i];
            m.final_velocity_error[e] = rot(g.velocity_error(&st));
        }
        let out = policy_forward(policy, env.observations())?;
        let bits = if opts.stochastic {
            sample_actions(&out.logits, n_act, &mut sampler).bits
        } else {
            greedy_actions(&out.logits)
        };
        let batch = env.step_batch(&bits)?;
        for e in 0..n {
            if !alive[e] {
                continue;
            }
            let i = t * n + e;
            m.reward[i] = batch.rewards[e];
            m.fired[i] = bits[e * n_act..(e + 1) * n_act].iter().filter(|&&b| b).count() as u32;
            m.lengths[e] = t + 1;
            if batch.dones[e] {
                alive[e] = false;
            }
        }
    }
    for e in (0..n).filter(|&e| alive[e] && steps > 0) {
        let st = env.state(e);
        let g = env.goal(e);
        m.final_distance[e] = g.primary_error(&st);
        m.final_rotation_error[e] = rot(g.rotation_error(&st));
        m.final_velocity_error[e] = rot(g.velocity_error(&st));
    }
    Ok(m)
}

/// Order statistics of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p05: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl Stats {
    /// Ignores NaN entries; `None` if nothing remains.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        Some(Self {
            n: v.len(),
            mean,
            std,
            min: v[0],
            p05: percentile_sorted(&v, 0.05),
            median: percentile_sorted(&v, 0.5),
            p95: percentile_sorted(&v, 0.95),
            max: v[v.len() - 1],
        })
    }
}

/// Linear interpolation between closest ranks; `sorted` must be ascending.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const STEP_METRICS: [&str; 6] = [
    "distance",
    "rotation_error",
    "speed",
    "angular_speed",
    "reward",
    "fired",
];
pub const EPISODE_METRICS: [&str; 5] = [
    "total_reward",
    "total_actions",
    "final_distance",
    "final_rotation_error",
    "length",
];

/// Aggregates of one per-step metric at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSummary {
    pub step: usize,
    pub metric: &'static str,
    pub stats: Stats,
    /// Value of the best / worst environment (by total reward) at this step.
    pub best: f64,
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub per_step: Vec<StepSummary>,
    pub per_episode: Vec<(&'static str, Stats)>,
    pub best_env: usize,
    pub worst_env: usize,
}

impl SummaryStats {
    pub fn step_series(&self, metric: &str) -> Vec<&StepSummary> {
        self.per_step.iter().filter(|s| s.metric == metric).collect()
    }

    pub fn episode(&self, metric: &str) -> Option<&Stats> {
        self.per_episode.iter().find(|(m, _)| *m == metric).map(|(_, s)| s)
    }
}

fn step_metric<'a>(m: &'a EpisodeMetrics, name: &str) -> Box<dyn Fn(usize) -> f64 + 'a> {
    match name {
        "distance" => Box::new(|i| m.distance[i]),
        "rotation_error" => Box::new(|i| m.rotation_error[i]),
        "speed" => Box::new(|i| m.speed[i]),
        "angular_speed" => Box::new(|i| m.angular_speed[i]),
        "reward" => Box::new(|i| m.reward[i]),
        _ => Box::new(|i| f64::from(m.fired[i])),
    }
}

pub fn summarize(m: &EpisodeMetrics) -> Result<SummaryStats, EvalError> {
    if m.n_envs == 0 || m.steps == 0 {
        return Err(EvalError::EmptyInput);
    }
    let episodes = m.episodes();
    let mut best_env = 0;
    let mut worst_env = 0;
    for ep in &episodes {
        if ep.total_reward > episodes[best_env].total_reward {
            best_env = ep.env;
        }
        if ep.total_reward < episodes[worst_env].total_reward {
            worst_env = ep.env;
        }
    }
    let mut per_step = Vec::new();
    for name in STEP_METRICS {
        let f = step_metric(m, name);
        for t in 0..m.steps {
            let vals = (0..m.n_envs)
                .filter(|&e| m.active[t * m.n_envs + e])
                .map(|e| f(t * m.n_envs + e));
            if let Some(stats) = Stats::of(vals) {
                let pick = |e: usize| {
                    if m.active[t * m.n_envs + e] {
                        f(t * m.n_envs + e)
                    } else {
                        f64::NAN
                    }
                };
                per_step.push(StepSummary {
                    step: t,
                    metric: name,
                    stats,
                    best: pick(best_env),
                    worst: pick(worst_env),
                });
            }
        }
    }
    let mut per_episode = Vec::new();
    for name in EPISODE_METRICS {
        let vals = episodes.iter().map(|ep| match name {
            "total_reward" => ep.total_reward,
            "total_actions" => ep.total_actions as f64,
            "final_distance" => ep.final_distance,
            "final_rotation_error" => ep.final_rotation_error,
            _ => ep.length as f64,
        });
        if let Some(s) = Stats::of(vals) {
            per_episode.push((name, s));
        }
    }
    Ok(SummaryStats {
        per_step,
        per_episode,
        best_env,
        worst_env,
    })
}

/// Provenance written alongside the report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportContext<'a> {
    pub config: &'a RunConfig,
    pub seed: u64,
    pub opts: EvalOptions,
    /// Free-form origin of the policy, e.g. a checkpoint path.
    pub policy_source: String,
}

fn fmt_opt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn flag(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "1",
        Some(false) => "0",
        None => "",
    }
}

pub const PER_STEP_FILE: &str = "per_step.csv";
pub const PER_EPISODE_FILE: &str = "per_episode.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const MANIFEST_FILE: &str = "run_manifest.txt";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

/// Writes the report files into `out_dir`. Every file is rendered before
/// any is written, so failures leave no partial report behind.
pub fn write_report(
    m: &EpisodeMetrics,
    summary: &SummaryStats,
    ctx: &ReportContext<'_>,
    out_dir: &Path,
) -> Result<(), EvalError> {
    if m.n_envs == 0 || m.steps == 0 {
        return Err(EvalError::EmptyInput);
    }
    let hash = ctx.config.hash();
    let banner = |name: &str| format!("# thrustsim {name} version={} config_hash={hash}\n", crate::VERSION);
    let n = m.n_envs;

    let mut per_step = banner("per_step");
    per_step.push_str("step,env,distance,rotation_error,speed,angular_speed,reward,fired\n");
    for t in 0..m.steps {
        for e in 0..n {
            let i = t * n + e;
            if !m.active[i] {
                continue;
            }
            let _ = writeln!(
                per_step,
                "{t},{e},{},{},{},{},{},{}",
                fmt_opt(m.distance[i]),
                fmt_opt(m.rotation_error[i]),
                fmt_opt(m.speed[i]),
                fmt_opt(m.angular_speed[i]),
                fmt_opt(m.reward[i]),
                m.fired[i]
            );
        }
    }

    let mut per_episode = banner("per_episode");
    per_episode.push_str(
        "env,length,total_reward,total_actions,final_distance,final_rotation_error,final_velocity_error,\
         success_position,success_attitude,success_velocity,success\n",
    );
    for ep in m.episodes() {
        let _ = writeln!(
            per_episode,
            "{},{},{},{},{},{},{},{},{},{},{}",
            ep.env,
            ep.length,
            ep.total_reward,
            ep.total_actions,
            fmt_opt(ep.final_distance),
            fmt_opt(ep.final_rotation_error),
            fmt_opt(ep.final_velocity_error),
            flag(ep.success_position),
            flag(ep.success_attitude),
            flag(ep.success_velocity),
            u8::from(ep.success())
        );
    }

    let mut sum = banner("summary");
    let _ = writeln!(sum, "# best_env={} worst_env={}", summary.best_env, summary.worst_env);
    sum.push_str("scope,step,metric,n,mean,std,min,p05,median,p95,max,best,worst\n");
    for s in &summary.per_step {
        let st = s.stats;
        let _ = writeln!(
            sum,
            "step,{},{},{},{},{},{},{},{},{},{},{},{}",
            s.step,
            s.metric,
            st.n,
            st.mean,
            st.std,
            st.min,
            st.p05,
            st.median,
            st.p95,
            st.max,
            fmt_opt(s.best),
            fmt_opt(s.worst)
        );
    }
    for (name, st) in &summary.per_episode {
        let _ = writeln!(
            sum,
            "episode,,{name},{},{},{},{},{},{},{},{},,",
            st.n, st.mean, st.std, st.min, st.p05, st.median, st.p95, st.max
        );
    }

    let three_d = m.task.dof() == crate::dynamics::Dof::Six;
    let mut traj = banner("trajectories");
    traj.push_str(if three_d { "env,step,x,y,z\n" } else { "env,step,x,y\n" });
    for e in 0..n {
        for t in 0..m.lengths[e] {
            let p = &m.positions[3 * (t * n + e)..3 * (t * n + e) + 3];
            if three_d {
                let _ = writeln!(traj, "{e},{t},{},{},{}", p[0], p[1], p[2]);
            } else {
                let _ = writeln!(traj, "{e},{t},{},{}", p[0], p[1]);
            }
        }
    }

    let resolved = ctx.config.resolved();
    let manifest = manifest_text(ctx, &hash, m, &resolved);

    fs::create_dir_all(out_dir)?;
    for (name, body) in [
        (PER_STEP_FILE, per_step),
        (PER_EPISODE_FILE, per_episode),
        (SUMMARY_FILE, sum),
        (TRAJECTORIES_FILE, traj),
        (MANIFEST_FILE, manifest),
        (RESOLVED_CONFIG_FILE, resolved.to_toml()),
    ] {
        fs::write(out_dir.join(name), body)?;
    }
    Ok(())
}

fn manifest_text(ctx: &ReportContext<'_>, hash: &str, m: &EpisodeMetrics, resolved: &RunConfig) -> String {
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut s = String::new();
    let _ = writeln!(s, "version={}", crate::VERSION);
    let _ = writeln!(s, "timestamp_unix={stamp}");
    let _ = writeln!(s, "seed={}", ctx.seed);
    let _ = writeln!(s, "config_hash={hash}");
    let _ = writeln!(s, "task={}", m.task);
    let _ = writeln!(s, "n_envs={}", m.n_envs);
    let _ = writeln!(s, "steps={}", m.steps);
    let _ = writeln!(s, "stochastic={}", ctx.opts.stochastic);
    let _ = writeln!(s, "policy={}", ctx.policy_source);
    manifest_defaults(&mut s, resolved);
    s
}

/// Appends one `implementation_default.<key>=<value>` line per implementation
/// default, with the value in effect for this run.
pub fn manifest_defaults(out: &mut String, resolved: &RunConfig) {
    let value: toml::Value = toml::Value::try_from(resolved).expect("config converts to a TOML value");
    for key in IMPLEMENTATION_DEFAULTS {
        let v = key.split('.').try_fold(&value, |v, part| v.get(part));
        let text = v.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "implementation_default.{key}={text}");
    }
}
