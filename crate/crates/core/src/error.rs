use thiserror::Error;

use crate::linsolve::SolveReport;

/// Errors produced by assembly, sampling, solving and time stepping.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("ILU(0) factorization failed: zero pivot in row {row}")]
    ZeroPivot { row: usize },

    #[error("BiCGStab breakdown after {} iterations (relative residual {:.3e})", .report.iterations, .report.final_residual)]
    Breakdown { report: SolveReport },

    #[error("linear solve did not converge after {} iterations (relative residual {:.3e})", .report.iterations, .report.final_residual)]
    NotConverged { report: SolveReport },

    #[error("matrix is singular to working precision")]
    SingularMatrix,

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("study aborted: {0}")]
    StudyAborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
