//! Shared-trunk actor-critic MLP with per-thruster binary heads.
//!
//! All parameters live in one flat vector so the optimizer, checkpoints and
//! finite-difference checks can treat the network as a point in `ℝᵖ`.
//! Weight blocks are stored row-major as `fan_in × fan_out`, followed by the
//! bias of that layer.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::AgentError;

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerSpec {
    offset: usize,
    fan_in: usize,
    fan_out: usize,
}

impl LayerSpec {
    fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    fn len(&self) -> usize {
        self.weight_len() + self.fan_out
    }

    fn weight<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (self.fan_in, self.fan_out),
            &params[self.offset..self.offset + self.weight_len()],
        )
        .expect("layer spec matches parameter block")
    }

    fn bias<'a>(&self, params: &'a [f64]) -> ArrayView1<'a, f64> {
        let start = self.offset + self.weight_len();
        ArrayView1::from(&params[start..start + self.fan_out])
    }
}

/// Actor-critic network: `tanh` trunk, `2·n_heads` logits, one value.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    obs_dim: usize,
    n_heads: usize,
    hidden: Vec<usize>,
    params: Vec<f64>,
    trunk: Vec<LayerSpec>,
    policy_head: LayerSpec,
    value_head: LayerSpec,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    activations: Vec<Array2<f64>>,
    /// `batch × 2·n_heads`; head `i` owns columns `2i` (idle) and `2i+1` (fire).
    pub logits: Array2<f64>,
    pub values: Array1<f64>,
}

/// Output of [`policy_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub batch: usize,
    pub n_heads: usize,
    /// `batch × n_heads × 2`, row-major.
    pub logits: Vec<f64>,
    pub values: Vec<f64>,
}

impl PolicyOutput {
    pub fn logits_row(&self, row: usize) -> &[f64] {
        let w = 2 * self.n_heads;
        &self.logits[row * w..(row + 1) * w]
    }
}

fn plan(obs_dim: usize, n_heads: usize, hidden: &[usize]) -> (Vec<LayerSpec>, LayerSpec, LayerSpec, usize) {
    let mut offset = 0;
    let mut fan_in = obs_dim;
    let mut trunk = Vec::with_capacity(hidden.len());
    for &h in hidden {
        let spec = LayerSpec {
            offset,
            fan_in,
            fan_out: h,
        };
        offset += spec.len();
        trunk.push(spec);
        fan_in = h;
    }
    let policy_head = LayerSpec {
        offset,
        fan_in,
        fan_out: 2 * n_heads,
    };
    offset += policy_head.len();
    let value_head = LayerSpec {
        offset,
        fan_in,
        fan_out: 1,
    };
    offset += value_head.len();
    (trunk, policy_head, value_head, offset)
}

/// Parameter count for the given shape.
pub fn param_count(obs_dim: usize, n_heads: usize, hidden: &[usize]) -> usize {
    plan(obs_dim, n_heads, hidden).3
}

/// Gain of the hidden layers' orthogonal initialization.
const TRUNK_GAIN: f64 = std::f64::consts::SQRT_2;
const POLICY_GAIN: f64 = 0.01;
const VALUE_GAIN: f64 = 1.0;

impl PolicyNet {
    /// Network with every parameter set to zero.
    pub fn zeros(obs_dim: usize, n_heads: usize, hidden: &[usize]) -> Self {
        let (trunk, policy_head, value_head, len) = plan(obs_dim, n_heads, hidden);
        Self {
            obs_dim,
            n_heads,
            hidden: hidden.to_vec(),
            params: vec![0.0; len],
            trunk,
            policy_head,
            value_head,
        }
    }

    /// Orthogonal initialization: gain √2 in the trunk, 0.01 on the policy
    /// head, 1 on the value head; zero biases.
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, n_heads: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(obs_dim, n_heads, hidden);
        let specs: Vec<(LayerSpec, f64)> = net
            .trunk
            .iter()
            .map(|s| (*s, TRUNK_GAIN))
            .chain([(net.policy_head, POLICY_GAIN), (net.value_head, VALUE_GAIN)])
            .collect();
        for (spec, gain) in specs {
            let w = orthogonal(spec.fan_in, spec.fan_out, gain, rng);
            net.params[spec.offset..spec.offset + spec.weight_len()].copy_from_slice(&w);
        }
        net
    }

    pub fn from_params(obs_dim: usize, n_heads: usize, hidden: &[usize], params: Vec<f64>) -> Result<Self, AgentError> {
        let mut net = Self::zeros(obs_dim, n_heads, hidden);
        if params.len() != net.params.len() {
            return Err(AgentError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Forward pass over a `batch × obs_dim` block.
    pub fn forward_cached(&self, obs: ArrayView2<'_, f64>) -> ForwardCache {
        let batch = obs.nrows();
        let input = obs.to_owned();
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.trunk.len());
        for spec in &self.trunk {
            let x = activations.last().unwrap_or(&input);
            let mut z = Array2::zeros((batch, spec.fan_out));
            z += &spec.bias(&self.params);
            general_mat_mul(1.0, x, &spec.weight(&self.params), 1.0, &mut z);
            z.mapv_inplace(tanh);
            activations.push(z);
        }
        let feat = activations.last().unwrap_or(&input);
        let mut logits = Array2::zeros((batch, self.policy_head.fan_out));
        logits += &self.policy_head.bias(&self.params);
        general_mat_mul(1.0, feat, &self.policy_head.weight(&self.params), 1.0, &mut logits);
        let mut values = Array2::zeros((batch, 1));
        values += &self.value_head.bias(&self.params);
        general_mat_mul(1.0, feat, &self.value_head.weight(&self.params), 1.0, &mut values);
        let values = values.index_axis_move(Axis(1), 0);
        ForwardCache {
            input,
            activations,
            logits,
            values,
        }
    }

    /// Accumulates parameter gradients into `grad` given the loss gradient
    /// with respect to the logits and values of `cache`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: ArrayView2<'_, f64>,
        d_values: ArrayView1<'_, f64>,
        grad: &mut [f64],
    ) {
        assert_eq!(grad.len(), self.params.len());
        let feat = cache.activations.last().map(|a| a.view()).unwrap_or(cache.input.view());
        let d_values = d_values.insert_axis(Axis(1));

        accumulate_layer_grad(&self.policy_head, feat, d_logits, grad);
        accumulate_layer_grad(&self.value_head, feat, d_values, grad);
        if self.trunk.is_empty() {
            return;
        }
        let mut d_feat = d_logits.dot(&self.policy_head.weight(&self.params).t());
        general_mat_mul(
            1.0,
            &d_values,
            &self.value_head.weight(&self.params).t(),
            1.0,
            &mut d_feat,
        );

        for (l, spec) in self.trunk.iter().enumerate().rev() {
            let act = &cache.activations[l];
            // tanh' = 1 − tanh²
            ndarray::Zip::from(&mut d_feat)
                .and(act)
                .for_each(|d, &a| *d *= 1.0 - a * a);
            let x = if l == 0 {
                cache.input.view()
            } else {
                cache.activations[l - 1].view()
            };
            accumulate_layer_grad(spec, x, d_feat.view(), grad);
            if l > 0 {
                d_feat = d_feat.dot(&spec.weight(&self.params).t());
            }
        }
    }
}

fn accumulate_layer_grad(spec: &LayerSpec, x: ArrayView2<'_, f64>, dz: ArrayView2<'_, f64>, grad: &mut [f64]) {
    let (w_grad, rest) = grad[spec.offset..spec.offset + spec.len()].split_at_mut(spec.weight_len());
    let mut w_grad = ArrayViewMut2::from_shape((spec.fan_in, spec.fan_out), w_grad).expect("weight block shape");
    general_mat_mul(1.0, &x.t(), &dz, 1.0, &mut w_grad);
    for (g, s) in rest.iter_mut().zip(dz.sum_axis(Axis(0))) {
        *g += s;
    }
}

/// `tanh` through one `exp`, several times faster than `f64::tanh`; relative
/// error below 1e-12.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 1e-3 {
        let x2 = x * x;
        return x * (1.0 - x2 * (1.0 / 3.0 - x2 * (2.0 / 15.0)));
    }
    let e = (-2.0 * a).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// `fan_in × fan_out` block with orthonormal rows or columns, scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (rows, cols) = (fan_in.max(fan_out), fan_in.min(fan_out));
    let a = nalgebra::DMatrix::<f64>::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = vec![0.0; fan_in * fan_out];
    for i in 0..fan_in {
        for j in 0..fan_out {
            let v = if fan_in >= fan_out { q[(i, j)] } else { q[(j, i)] };
            out[i * fan_out + j] = gain * v;
        }
    }
    out
}

/// Logits and values for a flat `batch × obs_dim` observation block.
pub fn policy_forward(net: &PolicyNet, obs: &[f64]) -> Result<PolicyOutput, AgentError> {
    let d = net.obs_dim();
    if d == 0 || obs.len() % d != 0 {
        return Err(AgentError::ShapeMismatch(format!(
            "observation block of {} values is not a multiple of width {d}",
            obs.len()
        )));
    }
    let batch = obs.len() / d;
    let view = ArrayView2::from_shape((batch, d), obs).expect("checked shape");
    let cache = net.forward_cached(view);
    Ok(PolicyOutput {
        batch,
        n_heads: net.n_heads(),
        logits: cache.logits.iter().copied().collect(),
        values: cache.values.to_vec(),
    })
}
