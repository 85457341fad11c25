use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("slope and angle are undefined for the zero vector")]
    ZeroVector,
    #[error("orbit escaped the modeled region at step {step}")]
    Escaped { step: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("rejection sampling exhausted {budget} trials; density bound or table is likely wrong")]
    RejectionBudgetExhausted { budget: u64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("power iteration did not converge within {iterations} iterations (residual {residual:e}); the class is nearly periodic, average over its cycle")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("return time is not constant over the disk: {0}")]
    ReturnTimeNotConstant(String),
    #[error("point failed the regularity screen: {0}")]
    ScreenFailed(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config error: {0}")]
    Invalid(String),
}
