//! Error taxonomy for the lab.
//!
//! Variants are grouped by how the CLI maps them to exit codes:
//! validation errors (bad request: exit 2), numerical failures (the run
//! started but could not finish soundly: exit 3), and infeasible requests
//! (the asked-for object provably does not exist: exit 4).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // --- validation ---
    #[error("gamma = {0} outside the supported range [-2, 1]")]
    InvalidGamma(f64),

    #[error("kernel component undefined at z = 0 for gamma = {gamma} < 0")]
    DomainError { gamma: f64 },

    #[error("inadmissible weight: {0}")]
    InadmissibleWeight(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dense assembly refused: N^3 = {requested} exceeds cap {cap}")]
    SizeCap { requested: usize, cap: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    // --- numerical failure ---
    #[error("solution blew up at t = {t}: {what}")]
    BlowUp { t: f64, what: String },

    #[error("conserved moment drifted beyond tolerance at t = {t}: {what}")]
    MomentDrift { t: f64, what: String },

    #[error("density not positive: excluded mass fraction {fraction:.3e} exceeds budget {budget:.3e}")]
    NonPositiveDensity { fraction: f64, budget: f64 },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("quadrature self-check failed: achieved {achieved:.3e}, target {target:.3e}")]
    Quadrature { achieved: f64, target: f64 },

    #[error("cutoff search exhausted: {0}")]
    SearchExhausted(String),

    #[error("cache file rejected: {0}")]
    BadCache(String),

    // --- infeasible request ---
    #[error("infeasible: requested rate {lambda} is not below the weight's decay abscissa {abscissa}")]
    Infeasible { lambda: f64, abscissa: f64 },
}

impl Error {
    /// CLI exit code class: 2 validation, 3 numerical failure, 4 infeasible.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            InvalidGamma(_) | DomainError { .. } | InadmissibleWeight(_) | GridMismatch(_)
            | SizeCap { .. } | Config(_) | Io(_) => 2,
            BlowUp { .. } | MomentDrift { .. } | NonPositiveDensity { .. } | Eigen(_)
            | Quadrature { .. } | SearchExhausted(_) | BadCache(_) => 3,
            Infeasible { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
