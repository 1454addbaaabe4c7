//! Collect-and-update training loop.

use std::io::Write;
use std::ops::ControlFlow;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dist::sample_actions;
use super::net::{policy_forward, PolicyNet};
use super::ppo::{ppo_update, Adam, RolloutBuffer};
use crate::config::RunConfig;
use crate::error::AgentError;
use crate::tasks::SpawnMode;
use crate::vecenv::VecEnv;

const AGENT_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// Independent random streams of the learner, derived from the run seed.
pub(crate) fn agent_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(AGENT_SEED_OFFSET));
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub run: RunConfig,
    pub seed: u64,
    /// Stepping threads; 1 keeps everything on the calling thread.
    pub workers: usize,
}

/// One line of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    /// Mean over environments of the undiscounted reward summed over the
    /// epoch's rollout.
    pub mean_return: f64,
    /// Mean task error at the end of the rollout (distance for GoTo tasks,
    /// velocity error for tracking tasks).
    pub mean_final_distance: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub steps_per_second: f64,
}

pub const CURVE_HEADER: &str =
    "epoch,mean_return,mean_final_distance,policy_loss,value_loss,entropy,clip_fraction,steps_per_second";

impl CurveRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.mean_return,
            self.mean_final_distance,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.clip_fraction,
            self.steps_per_second
        )
    }
}

pub fn write_curve<W: Write>(mut out: W, rows: &[CurveRow]) -> std::io::Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: PolicyNet,
    pub curve: Vec<CurveRow>,
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, AgentError> {
    train_with(cfg, |_, _| ControlFlow::Continue(()))
}

/// Trains for `ppo.epochs` epochs, calling `on_epoch` after every update.
/// Returning `Break` stops early and keeps the current network.
pub fn train_with<F>(cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome, AgentError>
where
    F: FnMut(&CurveRow, &PolicyNet) -> ControlFlow<()>,
{
    let run = &cfg.run;
    run.validate().map_err(|e| AgentError::InvalidHyperparams(e.message))?;
    let hp = run.ppo_hyperparams();
    hp.validate()?;
    let env_cfg = run
        .env_config(SpawnMode::Train)
        .map_err(|e| AgentError::InvalidHyperparams(e.message))?;
    let n_envs = run.ppo.n_envs;
    let mut env = VecEnv::with_workers(env_cfg, n_envs, cfg.seed, cfg.workers)?;
    let (obs_dim, n_heads) = (env.obs_dim(), env.n_actions());

    let mut net = PolicyNet::new(obs_dim, n_heads, &run.hidden_layers(), &mut agent_rng(cfg.seed, 0));
    let mut act_rng = agent_rng(cfg.seed, 1);
    let mut shuffle_rng = agent_rng(cfg.seed, 2);
    let mut opt = Adam::new(net.num_params(), hp.learning_rate);
    let mut buffer = RolloutBuffer::new(hp.rollout_horizon, n_envs, obs_dim, n_heads);
    let mut curve = Vec::with_capacity(hp.epochs);
    let mut returns = vec![0.0; n_envs];
    let mut truncated = Vec::new();
    let mut terminal_obs = Vec::new();

    for epoch in 0..hp.epochs {
        let started = Instant::now();
        buffer.clear();
        returns.fill(0.0);
        for _ in 0..hp.rollout_horizon {
            let obs = env.observations().to_vec();
            let out = policy_forward(&net, &obs)?;
            let sampled = sample_actions(&out.logits, n_heads, &mut act_rng);
            let batch = env.step_batch(&sampled.bits)?;
            truncated.clear();
            terminal_obs.clear();
            for e in 0..n_envs {
                returns[e] += batch.rewards[e];
                if batch.reasons[e].is_some_and(|r| r.is_truncation()) {
                    truncated.push(e);
                    terminal_obs.extend_from_slice(batch.terminal_observation(e).expect("done env has terminal obs"));
                }
            }
            buffer.push(
                &obs,
                &sampled.bits,
                &sampled.log_probs,
                &out.values,
                &batch.rewards,
                &batch.dones,
            );
            if !truncated.is_empty() {
                let boot = policy_forward(&net, &terminal_obs)?;
                for (k, &e) in truncated.iter().enumerate() {
                    buffer.set_bootstrap(e, boot.values[k]);
                }
            }
        }
        buffer.last_values = policy_forward(&net, env.observations())?.values;
        let final_distance = (0..n_envs)
            .map(|e| env.goal(e).primary_error(&env.state(e)))
            .sum::<f64>()
            / n_envs as f64;

        let report = ppo_update(&mut net, &mut opt, &buffer, &hp, &mut shuffle_rng, epoch)?;
        let elapsed = started.elapsed().as_secs_f64();
        let row = CurveRow {
            epoch,
            mean_return: returns.iter().sum::<f64>() / n_envs as f64,
            mean_final_distance: final_distance,
            policy_loss: report.policy_loss,
            value_loss: report.value_loss,
            entropy: report.entropy,
            clip_fraction: report.clip_fraction,
            steps_per_second: (hp.rollout_horizon * n_envs) as f64 / elapsed.max(1e-12),
        };
        curve.push(row);
        if on_epoch(&row, &net).is_break() {
            break;
        }
    }
    Ok(TrainOutcome { net, curve })
}
