use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("degenerate 6D rotation: {reason}")]
    DegenerateSixD { reason: &'static str },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("action has {got} bits but the layout has {expected} thrusters")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("state became non-finite during integration")]
    NonFiniteState,
    #[error("invalid body or thruster parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("goal of kind {goal} does not match task {task}")]
    KindMismatch { task: &'static str, goal: &'static str },
    #[error("observation buffer has length {got}, expected {expected}")]
    ObservationLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("environment index {index} out of range for {n_envs} environments")]
    IndexOutOfRange { index: usize, n_envs: usize },
    #[error(transparent)]
    Task(#[from] TaskError),
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at epoch {epoch}, minibatch {minibatch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        minibatch: usize,
        detail: String,
    },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("policy expects observations of width {policy}, task produces {task}")]
    PolicyTaskMismatch { policy: usize, task: usize },
    #[error("no metrics to summarize")]
    EmptyInput,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("invalid path parameters: {0}")]
    ParamInvalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct ConfigError {
    pub message: String,
    pub line: Option<usize>,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            line: None,
        }
    }
}
