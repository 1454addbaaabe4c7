//! Independent binary categorical per thruster.
//!
//! Each head has two logits `(idle, fire)`. The joint log-probability of an
//! action is the sum of per-head log-probabilities; the joint entropy is the
//! sum of per-head entropies.

use rand::Rng;

/// `(log p(idle), log p(fire))` for one head.
#[inline]
pub fn head_log_probs(l_idle: f64, l_fire: f64) -> (f64, f64) {
    let m = l_idle.max(l_fire);
    let lse = m + ((l_idle - m).exp() + (l_fire - m).exp()).ln();
    (l_idle - lse, l_fire - lse)
}

#[inline]
pub fn head_entropy(l_idle: f64, l_fire: f64) -> f64 {
    let (a, b) = head_log_probs(l_idle, l_fire);
    -(a.exp() * a + b.exp() * b)
}

/// Joint log-probability of `bits` under one row of `2·n` logits.
pub fn joint_log_prob(logits_row: &[f64], bits: &[bool]) -> f64 {
    debug_assert_eq!(logits_row.len(), 2 * bits.len());
    logits_row
        .chunks_exact(2)
        .zip(bits)
        .map(|(l, &b)| {
            let (idle, fire) = head_log_probs(l[0], l[1]);
            if b {
                fire
            } else {
                idle
            }
        })
        .sum()
}

pub fn joint_entropy(logits_row: &[f64]) -> f64 {
    logits_row.chunks_exact(2).map(|l| head_entropy(l[0], l[1])).sum()
}

/// Sampled actions for a batch of logit rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledActions {
    /// `batch × n_heads`, row-major.
    pub bits: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
}

/// Draws one bit per head. `logits` is `batch × n_heads × 2`.
pub fn sample_actions<R: Rng + ?Sized>(logits: &[f64], n_heads: usize, rng: &mut R) -> SampledActions {
    let batch = logits.len() / (2 * n_heads);
    let mut bits = Vec::with_capacity(batch * n_heads);
    let mut log_probs = Vec::with_capacity(batch);
    let mut entropies = Vec::with_capacity(batch);
    for row in logits.chunks_exact(2 * n_heads) {
        let mut lp = 0.0;
        let mut ent = 0.0;
        for l in row.chunks_exact(2) {
            let (idle, fire) = head_log_probs(l[0], l[1]);
            let p_fire = fire.exp();
            let b = rng.random::<f64>() < p_fire;
            bits.push(b);
            lp += if b { fire } else { idle };
            ent -= idle.exp() * idle + p_fire * fire;
        }
        log_probs.push(lp);
        entropies.push(ent);
    }
    SampledActions {
        bits,
        log_probs,
        entropies,
    }
}

/// Per-head argmax; ties resolve to idle.
pub fn greedy_actions(logits: &[f64]) -> Vec<bool> {
    logits.chunks_exact(2).map(|l| l[1] > l[0]).collect()
}
