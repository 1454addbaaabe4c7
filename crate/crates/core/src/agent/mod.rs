//! Actor-critic network, multi-binary policy and PPO training.

pub mod checkpoint;
pub mod dist;
pub mod gae;
pub mod net;
pub mod ppo;
pub mod train;

pub use checkpoint::Checkpoint;
pub use dist::{greedy_actions, joint_entropy, joint_log_prob, sample_actions, SampledActions};
pub use gae::{gae, GaeInput};
pub use net::{param_count, policy_forward, PolicyNet, PolicyOutput};
pub use ppo::{ppo_loss_and_grad, ppo_update, Adam, LossReport, MiniBatch, PpoHyperparams, RolloutBuffer};
pub use train::{train, train_with, write_curve, CurveRow, TrainConfig, TrainOutcome, CURVE_HEADER};
