//! Independent oracles shared by the property and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Vector2, Vector3};
use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thrustsim::agent::{
    joint_entropy, joint_log_prob, policy_forward, ppo_loss_and_grad, sample_actions, MiniBatch, PolicyNet,
    PpoHyperparams,
};
use thrustsim::dynamics::{RigidState, ThrusterLayout};
use thrustsim::geom::UnitQuaternion;
use thrustsim::tasks::{TaskGoal, TaskKind};

/// Loss of the PPO objective, evaluated directly from the definition.
pub fn reference_loss(
    net: &PolicyNet,
    obs: &[f64],
    bits: &[bool],
    old: &[f64],
    adv: &[f64],
    ret: &[f64],
    hp: &PpoHyperparams,
) -> f64 {
    let out = policy_forward(net, obs).unwrap();
    let n = net.n_heads();
    let b = adv.len();
    let (mut pl, mut vl, mut ent) = (0.0, 0.0, 0.0);
    for r in 0..b {
        let row = out.logits_row(r);
        let lp = joint_log_prob(row, &bits[r * n..(r + 1) * n]);
        let ratio = (lp - old[r]).exp();
        pl -= (ratio * adv[r]).min(ratio.clamp(1.0 - hp.clip, 1.0 + hp.clip) * adv[r]);
        vl += (out.values[r] - ret[r]).powi(2);
        ent += joint_entropy(row);
    }
    let b = b as f64;
    pl / b + hp.value_coef * vl / b - hp.entropy_coef * ent / b
}

/// Largest relative error between the analytic PPO gradient and central
/// differences of [`reference_loss`] over `trials` random toy problems. Also
/// returns the largest gap between reported and reference loss.
pub fn fd_gradient_check(trials: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_grad, mut worst_loss) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let net = PolicyNet::new(3, 2, &[4], &mut rng);
        let b = 5;
        let obs: Vec<f64> = (0..b * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = policy_forward(&net, &obs).unwrap();
        let s = sample_actions(&out.logits, 2, &mut rng);
        // Shift the behaviour log-probs so some ratios fall outside the clip range.
        let old: Vec<f64> = s.log_probs.iter().map(|l| l + rng.random_range(-0.4..0.4)).collect();
        let adv: Vec<f64> = (0..b).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ret: Vec<f64> = (0..b).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hp = PpoHyperparams {
            entropy_coef: 0.05,
            ..Default::default()
        };
        let mb = MiniBatch {
            obs: ArrayView2::from_shape((b, 3), &obs).unwrap(),
            actions: &s.bits,
            old_log_probs: &old,
            advantages: &adv,
            returns: &ret,
        };
        let mut grad = vec![0.0; net.num_params()];
        let report = ppo_loss_and_grad(&net, &mb, &hp, &mut grad);
        let direct = reference_loss(&net, &obs, &s.bits, &old, &adv, &ret, &hp);
        worst_loss = worst_loss.max((report.total - direct).abs());
        let h = 1e-6;
        let mut num = vec![0.0; net.num_params()];
        for (k, slot) in num.iter_mut().enumerate() {
            let mut p = net.clone();
            p.params_mut()[k] += h;
            let up = reference_loss(&p, &obs, &s.bits, &old, &adv, &ret, &hp);
            p.params_mut()[k] -= 2.0 * h;
            let down = reference_loss(&p, &obs, &s.bits, &old, &adv, &ret, &hp);
            *slot = (up - down) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        worst_grad = worst_grad.max(diff / scale);
    }
    (worst_grad, worst_loss)
}

/// Advantages by summing discounted TD residuals forward from each step.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_gae(
    r: &[f64],
    v: &[f64],
    d: &[bool],
    boot: &[f64],
    last: &[f64],
    n: usize,
    g: f64,
    l: f64,
) -> Vec<f64> {
    let h = r.len() / n;
    let delta = |t: usize, e: usize| {
        let i = t * n + e;
        let next = if d[i] {
            boot[i]
        } else if t + 1 < h {
            v[i + n]
        } else {
            last[e]
        };
        r[i] + g * next - v[i]
    };
    let mut out = vec![0.0; r.len()];
    for e in 0..n {
        for t in 0..h {
            let mut acc = 0.0;
            let mut w = 1.0;
            for k in t..h {
                acc += w * delta(k, e);
                if d[k * n + e] {
                    break;
                }
                w *= g * l;
            }
            out[t * n + e] = acc;
        }
    }
    out
}

/// Force and torque by summing each fired thruster's contribution.
pub fn brute_wrench(layout: &ThrusterLayout, action: &[bool]) -> (Vector3<f64>, Vector3<f64>) {
    let mut f = Vector3::zeros();
    let mut t = Vector3::zeros();
    for i in 0..layout.len() {
        if action[i] {
            let d = layout.directions()[i] * layout.magnitude();
            let p = layout.points()[i];
            f += d;
            t += Vector3::new(p.y * d.z - p.z * d.y, p.z * d.x - p.x * d.z, p.x * d.y - p.y * d.x);
        }
    }
    (f, t)
}

/// Straight transcription of the look-ahead selection rule.
pub fn brute_lookahead(points: &[Vector2<f64>], pos: Vector2<f64>, radius: f64) -> usize {
    let mut within = None;
    for (i, p) in points.iter().enumerate() {
        if ((p.x - pos.x).powi(2) + (p.y - pos.y).powi(2)).sqrt() <= radius {
            within = Some(i);
        }
    }
    within.unwrap_or_else(|| {
        let d: Vec<f64> = points.iter().map(|p| (p - pos).norm()).collect();
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        d.iter().position(|&x| x == min).unwrap()
    })
}

/// Random walk of `1..40` points and a query position.
pub fn random_path_query(rng: &mut ChaCha8Rng) -> (Vec<Vector2<f64>>, Vector2<f64>, f64) {
    let n = rng.random_range(1..40);
    let mut p = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let pts = (0..n)
        .map(|_| {
            p += Vector2::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
            p
        })
        .collect();
    let pos = Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    (pts, pos, rng.random_range(0.05..0.8))
}

/// Hand-computed task-data layouts: (kind, state, goal, full zero-padded td).
pub fn td_layout_cases() -> Vec<(TaskKind, RigidState, TaskGoal, Vec<f64>)> {
    let mut planar = RigidState::planar(1.0, -2.0, 0.5);
    planar.lin_vel = Vector3::new(0.3, -0.1, 0.0);
    planar.ang_vel = Vector3::new(0.0, 0.0, 0.2);
    let d = -0.5f64;
    let mut s = RigidState::at_rest(Vector3::new(1.0, 2.0, 3.0), UnitQuaternion::identity());
    s.lin_vel = Vector3::new(0.1, 0.2, 0.3);
    let rz = UnitQuaternion::from_axis_angle(&Vector3::z(), FRAC_PI_2);
    vec![
        (
            TaskKind::GoToXY,
            planar,
            TaskGoal::Position2D { target: [0.0, 0.0] },
            vec![-1.0, 2.0, 0.0, 0.0],
        ),
        (
            TaskKind::GoToPose2D,
            planar,
            TaskGoal::Pose2D {
                target: [0.0, 0.0],
                heading: 0.0,
            },
            vec![-1.0, 2.0, d.cos(), d.sin()],
        ),
        (
            TaskKind::TrackXYVelocity,
            planar,
            TaskGoal::Velocity2D { velocity: [0.5, 0.5] },
            vec![0.2, 0.6, 0.0, 0.0],
        ),
        (
            TaskKind::TrackXYOVelocity,
            planar,
            TaskGoal::VelocityOmega2D {
                velocity: [0.5, 0.5],
                omega: -0.3,
            },
            vec![0.2, 0.6, -0.5, 0.0],
        ),
        (
            TaskKind::GoToXYZ,
            s,
            TaskGoal::Position3D {
                target: Vector3::zeros(),
            },
            vec![-1.0, -2.0, -3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ),
        (
            TaskKind::GoToPose3D,
            s,
            TaskGoal::Pose3D {
                target: Vector3::zeros(),
                rotation: rz.to_rotation_matrix(),
            },
            // ΔR = Rz(π/2); first two rows.
            vec![-1.0, -2.0, -3.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0],
        ),
        (
            TaskKind::TrackXYZVelocity,
            s,
            TaskGoal::Velocity3D {
                velocity: Vector3::new(0.5, 0.0, -0.5),
            },
            vec![0.4, -0.2, -0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ),
    ]
}

/// Worst deviation of the observed td slots from [`td_layout_cases`]; unused
/// slots must hold +0.0 exactly.
pub fn td_layout_error() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (k, state, goal, want) in td_layout_cases() {
        let obs = thrustsim::tasks::observe(k, &state, &goal).map_err(|e| e.to_string())?;
        let start = obs.len() - want.len();
        let got = &obs.0[start..];
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            if i >= k.td_len() && g.to_bits() != 0 {
                return Err(format!("{k}: slot {i} holds {g}, expected zero fill"));
            }
            worst = worst.max((g - w).abs());
        }
    }
    Ok(worst)
}
