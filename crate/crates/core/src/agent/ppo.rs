//! Clipped-surrogate PPO for the multi-binary policy.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;

use super::dist::head_log_probs;
use super::net::PolicyNet;
use crate::error::AgentError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoHyperparams {
    /// Outer collect-and-update iterations.
    pub epochs: usize,
    /// Control steps collected per environment and epoch.
    pub rollout_horizon: usize,
    pub minibatches: usize,
    /// Passes over the rollout per epoch.
    pub update_epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoHyperparams {
    fn default() -> Self {
        Self {
            epochs: 2000,
            rollout_horizon: 32,
            minibatches: 4,
            update_epochs: 4,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.005,
            learning_rate: 1e-3,
            max_grad_norm: 1.0,
        }
    }
}

impl PpoHyperparams {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidHyperparams(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be positive");
        }
        if !(self.value_coef >= 0.0) {
            return bad("value_coef must be non-negative");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy_coef must be non-negative");
        }
        if self.rollout_horizon == 0 || self.minibatches == 0 || self.update_epochs == 0 {
            return bad("rollout_horizon, minibatches and update_epochs must be at least 1");
        }
        Ok(())
    }
}

/// One minibatch of training samples. `actions` is `batch × n_heads`.
#[derive(Debug, Clone, Copy)]
pub struct MiniBatch<'a> {
    pub obs: ArrayView2<'a, f64>,
    pub actions: &'a [bool],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

/// Loss terms of one update (averages over minibatches for [`ppo_update`]).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub total: f64,
}

/// PPO loss `policy + c_v·value − c_e·entropy` on one minibatch; writes its
/// gradient with respect to the network parameters into `grad`.
pub fn ppo_loss_and_grad(net: &PolicyNet, mb: &MiniBatch<'_>, hp: &PpoHyperparams, grad: &mut [f64]) -> LossReport {
    let batch = mb.obs.nrows();
    let n = net.n_heads();
    assert_eq!(mb.actions.len(), batch * n);
    grad.fill(0.0);
    if batch == 0 {
        return LossReport::default();
    }
    let cache = net.forward_cached(mb.obs);
    let inv_b = 1.0 / batch as f64;
    let mut d_logits = Array2::<f64>::zeros((batch, 2 * n));
    let mut d_values = Array1::<f64>::zeros(batch);
    let (mut policy_loss, mut value_loss, mut entropy, mut clipped) = (0.0, 0.0, 0.0, 0usize);
    let mut head_lp = vec![(0.0, 0.0); n];
    for b in 0..batch {
        let logits = cache.logits.row(b);
        let bits = &mb.actions[b * n..(b + 1) * n];
        let mut logp = 0.0;
        let mut ent = 0.0;
        for (i, slot) in head_lp.iter_mut().enumerate() {
            *slot = head_log_probs(logits[2 * i], logits[2 * i + 1]);
            logp += if bits[i] { slot.1 } else { slot.0 };
            ent -= slot.0.exp() * slot.0 + slot.1.exp() * slot.1;
        }
        let adv = mb.advantages[b];
        let ratio = (logp - mb.old_log_probs[b]).exp();
        let clipped_ratio = ratio.clamp(1.0 - hp.clip, 1.0 + hp.clip);
        policy_loss -= (ratio * adv).min(clipped_ratio * adv);
        if (ratio - 1.0).abs() > hp.clip {
            clipped += 1;
        }
        // The unclipped branch carries the gradient unless clipping binds.
        let active = if adv >= 0.0 {
            ratio <= 1.0 + hp.clip
        } else {
            ratio >= 1.0 - hp.clip
        };
        let d_logp = if active { -adv * ratio * inv_b } else { 0.0 };
        entropy += ent;

        let mut row = d_logits.row_mut(b);
        for (i, &(lp_idle, lp_fire)) in head_lp.iter().enumerate() {
            let (p_idle, p_fire) = (lp_idle.exp(), lp_fire.exp());
            let h = -(p_idle * lp_idle + p_fire * lp_fire);
            let (ind_idle, ind_fire) = if bits[i] { (0.0, 1.0) } else { (1.0, 0.0) };
            // d(−c_e·H)/dl_k = c_e·p_k(log p_k + H)
            row[2 * i] = d_logp * (ind_idle - p_idle) + hp.entropy_coef * inv_b * p_idle * (lp_idle + h);
            row[2 * i + 1] = d_logp * (ind_fire - p_fire) + hp.entropy_coef * inv_b * p_fire * (lp_fire + h);
        }
        let err = cache.values[b] - mb.returns[b];
        value_loss += err * err;
        d_values[b] = hp.value_coef * 2.0 * err * inv_b;
    }
    net.backward(&cache, d_logits.view(), d_values.view(), grad);
    let policy_loss = policy_loss * inv_b;
    let value_loss = value_loss * inv_b;
    let entropy = entropy * inv_b;
    LossReport {
        policy_loss,
        value_loss,
        entropy,
        clip_fraction: clipped as f64 * inv_b,
        total: policy_loss + hp.value_coef * value_loss - hp.entropy_coef * entropy,
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powf(self.t as f64);
        let bc2 = 1.0 - self.beta2.powf(self.t as f64);
        let step = self.learning_rate * bc2.sqrt() / bc1;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step * *m / (v.sqrt() + self.eps);
        }
    }
}

/// Scales `grad` so its L2 norm is at most `max_norm`; returns the
/// pre-clipping norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Shifts and scales to mean 0 and standard deviation 1 (population std,
/// `ε = 1e-8` in the denominator).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-8;
    adv.iter_mut().for_each(|a| *a = (*a - mean) / denom);
}

/// Time-major `horizon × n_envs` store of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub horizon: usize,
    pub n_envs: usize,
    pub obs_dim: usize,
    pub n_heads: usize,
    pub observations: Vec<f64>,
    pub actions: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Set where the episode was cut by the time limit; the terminal
    /// observation's value is stored in `bootstrap`.
    pub truncated: Vec<bool>,
    pub bootstrap: Vec<f64>,
    pub last_values: Vec<f64>,
    len: usize,
}

impl RolloutBuffer {
    pub fn new(horizon: usize, n_envs: usize, obs_dim: usize, n_heads: usize) -> Self {
        let s = horizon * n_envs;
        Self {
            horizon,
            n_envs,
            obs_dim,
            n_heads,
            observations: vec![0.0; s * obs_dim],
            actions: vec![false; s * n_heads],
            log_probs: vec![0.0; s],
            values: vec![0.0; s],
            rewards: vec![0.0; s],
            dones: vec![false; s],
            truncated: vec![false; s],
            bootstrap: vec![0.0; s],
            last_values: vec![0.0; n_envs],
            len: 0,
        }
    }

    pub fn clear(&mut self) {
        self.len = 0;
        self.bootstrap.fill(0.0);
        self.truncated.fill(false);
    }

    /// Number of time steps recorded.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.horizon
    }

    pub fn samples(&self) -> usize {
        self.horizon * self.n_envs
    }

    /// Records one lockstep step for all environments.
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        obs: &[f64],
        actions: &[bool],
        log_probs: &[f64],
        values: &[f64],
        rewards: &[f64],
        dones: &[bool],
    ) {
        assert!(self.len < self.horizon, "rollout buffer is full");
        let (n, t) = (self.n_envs, self.len);
        self.observations[t * n * self.obs_dim..(t + 1) * n * self.obs_dim].copy_from_slice(obs);
        self.actions[t * n * self.n_heads..(t + 1) * n * self.n_heads].copy_from_slice(actions);
        self.log_probs[t * n..(t + 1) * n].copy_from_slice(log_probs);
        self.values[t * n..(t + 1) * n].copy_from_slice(values);
        self.rewards[t * n..(t + 1) * n].copy_from_slice(rewards);
        self.dones[t * n..(t + 1) * n].copy_from_slice(dones);
        self.len += 1;
    }

    /// Marks `env` at the latest step as truncated with bootstrap value `v`.
    pub fn set_bootstrap(&mut self, env: usize, v: f64) {
        let i = (self.len - 1) * self.n_envs + env;
        self.truncated[i] = true;
        self.bootstrap[i] = v;
    }

    pub fn gae(&self, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        super::gae::gae(
            &super::gae::GaeInput {
                n_envs: self.n_envs,
                rewards: &self.rewards,
                values: &self.values,
                dones: &self.dones,
                bootstrap: &self.bootstrap,
                last_values: &self.last_values,
            },
            gamma,
            lambda,
        )
    }
}

/// Runs `update_epochs` shuffled minibatch passes over a full buffer.
pub fn ppo_update<R: Rng + ?Sized>(
    net: &mut PolicyNet,
    opt: &mut Adam,
    buffer: &RolloutBuffer,
    hp: &PpoHyperparams,
    rng: &mut R,
    epoch: usize,
) -> Result<LossReport, AgentError> {
    if !buffer.is_full() {
        return Err(AgentError::ShapeMismatch(format!(
            "rollout buffer holds {} of {} steps",
            buffer.len(),
            buffer.horizon
        )));
    }
    let (mut adv, returns) = buffer.gae(hp.gamma, hp.lambda);
    normalize_advantages(&mut adv);
    let total = buffer.samples();
    let mb_size = total.div_ceil(hp.minibatches);
    let (d, n) = (buffer.obs_dim, buffer.n_heads);
    let mut order: Vec<usize> = (0..total).collect();
    let mut grad = vec![0.0; net.num_params()];
    let mut obs = Vec::with_capacity(mb_size * d);
    let mut actions = Vec::with_capacity(mb_size * n);
    let (mut old_lp, mut mb_adv, mut mb_ret) = (Vec::new(), Vec::new(), Vec::new());
    let mut acc = LossReport::default();
    let mut count = 0usize;
    for _ in 0..hp.update_epochs {
        order.shuffle(rng);
        for (k, idx) in order.chunks(mb_size).enumerate() {
            obs.clear();
            actions.clear();
            old_lp.clear();
            mb_adv.clear();
            mb_ret.clear();
            for &i in idx {
                obs.extend_from_slice(&buffer.observations[i * d..(i + 1) * d]);
                actions.extend_from_slice(&buffer.actions[i * n..(i + 1) * n]);
                old_lp.push(buffer.log_probs[i]);
                mb_adv.push(adv[i]);
                mb_ret.push(returns[i]);
            }
            let mb = MiniBatch {
                obs: ArrayView2::from_shape((idx.len(), d), &obs).expect("minibatch shape"),
                actions: &actions,
                old_log_probs: &old_lp,
                advantages: &mb_adv,
                returns: &mb_ret,
            };
            let report = ppo_loss_and_grad(net, &mb, hp, &mut grad);
            if !report.total.is_finite() {
                return Err(AgentError::NonFiniteLoss {
                    epoch,
                    minibatch: k,
                    detail: format!(
                        "policy={} value={} entropy={}",
                        report.policy_loss, report.value_loss, report.entropy
                    ),
                });
            }
            clip_grad_norm(&mut grad, hp.max_grad_norm);
            opt.step(net.params_mut(), &grad);
            acc.policy_loss += report.policy_loss;
            acc.value_loss += report.value_loss;
            acc.entropy += report.entropy;
            acc.clip_fraction += report.clip_fraction;
            acc.total += report.total;
            count += 1;
        }
    }
    if !net.is_finite() {
        return Err(AgentError::NonFiniteLoss {
            epoch,
            minibatch: count,
            detail: "non-finite weights".into(),
        });
    }
    let c = count.max(1) as f64;
    Ok(LossReport {
        policy_loss: acc.policy_loss / c,
        value_loss: acc.value_loss / c,
        entropy: acc.entropy / c,
        clip_fraction: acc.clip_fraction / c,
        total: acc.total / c,
    })
}
