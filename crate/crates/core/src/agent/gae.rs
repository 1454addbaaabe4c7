//! Generalized advantage estimation over a time-major `horizon × n_envs` block.

/// Inputs of one GAE pass. Every slice except `last_values` is
/// `horizon × n_envs`, time-major.
#[derive(Debug, Clone, Copy)]
pub struct GaeInput<'a> {
    pub n_envs: usize,
    pub rewards: &'a [f64],
    /// `V(s_t)` of the observation each action was taken from.
    pub values: &'a [f64],
    /// Episode ended after step `t`.
    pub dones: &'a [bool],
    /// Value of the terminal observation for episodes cut by the time limit;
    /// zero for true terminations. Only read where `dones` is set.
    pub bootstrap: &'a [f64],
    /// `V` of the observations following the last step, one per env.
    pub last_values: &'a [f64],
}

/// Returns `(advantages, returns)`:
///
/// `δ_t = r_t + γ·next_t − v_t`, with `next_t = bootstrap_t` if the episode
/// ended at `t` and `v_{t+1}` otherwise; `A_t = δ_t + γλ(1 − done_t)·A_{t+1}`;
/// `returns = A + v`.
pub fn gae(input: &GaeInput<'_>, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = input.n_envs;
    let len = input.rewards.len();
    assert!(n > 0 && len % n == 0, "GAE block is not a multiple of n_envs");
    assert_eq!(input.values.len(), len);
    assert_eq!(input.dones.len(), len);
    assert_eq!(input.bootstrap.len(), len);
    assert_eq!(input.last_values.len(), n);
    let horizon = len / n;
    let mut adv = vec![0.0; len];
    let mut running = vec![0.0; n];
    for t in (0..horizon).rev() {
        for e in 0..n {
            let i = t * n + e;
            let (next, carry) = if input.dones[i] {
                (input.bootstrap[i], 0.0)
            } else if t + 1 < horizon {
                (input.values[i + n], running[e])
            } else {
                (input.last_values[e], running[e])
            };
            let delta = input.rewards[i] + gamma * next - input.values[i];
            running[e] = delta + gamma * lambda * carry;
            adv[i] = running[e];
        }
    }
    let returns = adv.iter().zip(input.values).map(|(a, v)| a + v).collect();
    (adv, returns)
}
