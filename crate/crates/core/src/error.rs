use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("gap region does not contain the origin")]
    NotStealthy,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("energy minimization did not converge (best energy {best_energy:e})")]
    NonConvergence { best_energy: f64 },

    #[error("configuration is empty")]
    EmptyConfiguration,

    #[error("test function support leaves the gap: {0}")]
    SupportViolation(String),

    #[error("configuration carries no stealth certificate for this gap")]
    CertificateMissing,

    #[error("rank-deficient system: {unknowns} unknowns, {constraints} constraints, conditioning {conditioning:e}")]
    RankDeficient {
        unknowns: usize,
        constraints: usize,
        conditioning: f64,
    },

    #[error("only {usable} resolvable scales, need at least {required}")]
    InsufficientScales { usable: usize, required: usize },

    #[error("error bar {bar:e} exceeds tolerance {tolerance:e}")]
    Precision { bar: f64, tolerance: f64 },

    #[error("inversion residual {residual:e} exceeds tolerance {tolerance:e}")]
    InversionFailure {
        residual: f64,
        tolerance: f64,
        best: Vec<Vec<f64>>,
    },

    #[error("scale not resolvable: {0}")]
    Resolution(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
