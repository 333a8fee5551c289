use thiserror::Error;

/// Errors raised by the core solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid horizon: tf ({tf}) must exceed t0 ({t0})")]
    InvalidHorizon { t0: f64, tf: f64 },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("constraint matrix is rank deficient (rank {rank} < {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },
    #[error("saddle matrix is singular")]
    Singular,
    #[error("saddle matrix is ill-conditioned (estimate {estimate:e}, limit {limit:e})")]
    IllConditioned { estimate: f64, limit: f64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("covariance is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
