//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A distribution parameter lies outside its domain.
    #[error("parameter domain violation: {0}")]
    ParamDomain(String),

    /// An interval has a lower bound at or above its upper bound.
    #[error("invalid interval: lo = {lo}, hi = {hi}")]
    Interval { lo: f64, hi: f64 },

    /// A matrix failed a structural requirement (symmetry, positive definiteness).
    #[error("matrix error: {0}")]
    Matrix(String),

    /// A linear system was numerically singular.
    #[error("numerical singularity: {0}")]
    Singular(String),

    /// An observation does not conform to the model's variable layout.
    #[error("layout mismatch: {0}")]
    Layout(String),

    /// A discrete value lies outside the distribution's support.
    #[error("value {value} outside support: {detail}")]
    Support { value: i64, detail: String },

    /// The data is degenerate (zero-range column, constant binary, ...).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// Numerical failure (underflow, non-finite intermediate).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Invalid run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Data file loading / validation failure.
    #[error("data error: {0}")]
    Data(String),

    /// Sample store persistence failure.
    #[error("store error: {0}")]
    Store(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// An error raised during an MCMC sweep, with the sweep index attached.
    #[error("sweep {sweep}: {source}")]
    Sweep {
        sweep: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attach a sweep index to an error propagating out of the chain loop.
    pub fn at_sweep(self, sweep: u64) -> Self {
        Error::Sweep {
            sweep,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
