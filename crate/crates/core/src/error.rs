use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative routine hit its cap without meeting its tolerance.
    #[error("{routine} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        routine: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A linear system or normalisation degenerated.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Observed timing has zero probability under the assumed schedule.
    #[error("interval {interval} observed at index {index} is impossible under the known schedule")]
    InconsistentTiming { index: usize, interval: usize },

    /// A belief normaliser vanished.
    #[error("zero normaliser while computing {0}")]
    ZeroNormalizer(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures caused by numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::Numerical(_) | Error::ZeroNormalizer(_)
        )
    }
}
