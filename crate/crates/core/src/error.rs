use thiserror::Error;

/// Errors raised by the numerical layers (math, synthesis, filtering, simulation).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, tolerance {tolerance:e})")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPd { min_eigenvalue: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("numerically singular matrix in {context}")]
    SingularMatrix { context: &'static str },

    #[error("innovation covariance C G C' + M is not positive definite")]
    SingularInnovation,

    #[error("penalty too small: lambda*I - P_{stage} has min eigenvalue {margin:e}")]
    PenaltyTooSmall { stage: usize, margin: f64 },

    #[error("no feasible penalty parameter in [{lo}, {hi}]")]
    NoFeasibleLambda { lo: f64, hi: f64 },

    #[error("worst-case covariance ascent diverged after {iterations} iterations")]
    Diverged { iterations: usize },

    #[error("sample set is empty")]
    EmptySamples,

    #[error("degenerate LQ reference cost {j_lq}")]
    DegenerateLq { j_lq: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("stage {stage}: {source}")]
    AtStage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_stage(self, stage: usize) -> Error {
        match self {
            // keep the innermost stage
            e @ Error::AtStage { .. } => e,
            e => Error::AtStage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimMismatch { context, expected, found })
    }
}
