use thiserror::Error;

/// Errors produced by MDP construction, dataset handling, operator fitting
/// and experiment orchestration.
#[derive(Debug, Error)]
pub enum FqeError {
    #[error("invalid horizon: {0}")]
    InvalidHorizon(String),

    #[error("value iteration did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error(
        "sufficient-exploration violation at h={h}, s={s}, a={a}: \
         occupancy mass {mass} on a pair with zero data probability"
    )]
    ExplorationViolation { h: usize, s: usize, a: usize, mass: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular normal equations; use a ridge penalty lambda > 0")]
    SingularSystem,

    #[error("kernel quadratic form is negative beyond numerical slack: {0}")]
    KernelNotPsd(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FqeError>;
