use thiserror::Error;

use crate::flow::FlowOutcome;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model is not identifiable on the candidate set: need rank {expected}, found {rank}")]
    RankDeficient { expected: usize, rank: usize },

    #[error("current design does not identify the model (pivot {pivot:e} below threshold {threshold:e})")]
    SupportRankDeficient { pivot: f64, threshold: f64 },

    #[error("negative weight {value:e} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("Hessian of the step objective is not positive definite (pivot {pivot} failed)")]
    IndefiniteHessian { pivot: usize },

    #[error("gradient vanishes at the starting point")]
    ZeroGradientStart,

    #[error("no convergence within {steps} outer steps")]
    NonConvergence {
        steps: usize,
        partial: Box<FlowOutcome>,
    },

    #[error("restart budget exhausted at outer step {step}")]
    RestartBudgetExhausted {
        step: usize,
        partial: Box<FlowOutcome>,
    },

    #[error("multiplicative algorithm did not converge within {0} iterations")]
    TitteringtonNonConvergence(usize),

    #[error("moment mismatch after compression: residual {residual:e} exceeds {limit:e}")]
    MomentMismatch { residual: f64, limit: f64 },

    #[error("dense operation on {m} points exceeds the cap of {cap}")]
    DenseCapExceeded { m: usize, cap: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Stable identifier used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::SupportRankDeficient { .. } => "SupportRankDeficient",
            Error::NegativeWeight { .. } => "NegativeWeight",
            Error::IndefiniteHessian { .. } => "IndefiniteHessian",
            Error::ZeroGradientStart => "ZeroGradientStart",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::RestartBudgetExhausted { .. } => "RestartBudgetExhausted",
            Error::TitteringtonNonConvergence(_) => "NonConvergence",
            Error::MomentMismatch { .. } => "MomentMismatch",
            Error::DenseCapExceeded { .. } => "DenseCapExceeded",
            Error::Dimension(_) => "Dimension",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
            Error::Toml(_) => "Toml",
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Dimension(_) => 2,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Toml(_) => 3,
            Error::RankDeficient { .. } | Error::SupportRankDeficient { .. } => 4,
            Error::NonConvergence { .. }
            | Error::RestartBudgetExhausted { .. }
            | Error::TitteringtonNonConvergence(_) => 5,
            _ => 6,
        }
    }
}
