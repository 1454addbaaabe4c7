//! Binary-thruster spacecraft simulation and PPO training.
//!
//! A vectorized rigid-body environment for planar (3DoF) and spatial (6DoF)
//! craft actuated by on/off thrusters, a multi-binary actor-critic agent, a
//! look-ahead path follower and an evaluation harness.

pub mod agent;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod evalkit;
pub mod geom;
pub mod planner;
pub mod tasks;
pub mod vecenv;

pub use config::RunConfig;
pub use error::{AgentError, ConfigError, DynamicsError, EnvError, EvalError, GeomError, PlannerError, TaskError};

/// Version string written into reports and checkpoints.
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));
