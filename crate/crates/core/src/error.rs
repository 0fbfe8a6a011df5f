use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("UE {ue} exceeds its transmit power in {phase}: {power:.6e} > {limit:.6e}")]
    UePowerViolation {
        phase: &'static str,
        ue: usize,
        power: f64,
        limit: f64,
    },

    #[error("power scaling undefined: {0}")]
    Scaling(String),

    #[error("dual solver failed: {0}")]
    DualSolver(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("campaign failed: {failed} of {total} drops failed")]
    Campaign { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
