//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Fock dimension {dim}: need at least 2 levels")]
    InvalidDimension { dim: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("Fock truncation too severe: top-level population {population:.3e} exceeds {threshold:.1e}")]
    Truncation { population: f64, threshold: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("step size too large: {0}")]
    StepSize(String),

    #[error("stability bound violated: {0}")]
    Stability(String),

    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    #[error("integration diverged at t = {t}: {detail}")]
    Divergence { t: f64, detail: String },

    #[error("unnormalized state norm {norm:.3e} outside [1e-100, 1e100]; rescale required")]
    RescaleRequired { norm: f64 },

    #[error("transfer-function algebra: {0}")]
    Algebra(String),

    #[error("transfer function has a pole on the evaluation axis at Omega = {omega}")]
    PoleOnAxis { omega: f64 },

    #[error("infeasible design: {0}")]
    Infeasible(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("invalid config value for {path}: {message}")]
    ConfigValue { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_step(self, step: usize) -> Error {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub fn in_trajectory(self, index: usize) -> Error {
        Error::Trajectory {
            index,
            source: Box::new(self),
        }
    }

    /// The innermost error, with step and trajectory annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::Trajectory { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(
            self.root(),
            Error::ConfigParse { .. } | Error::ConfigValue { .. }
        )
    }
}
