use crate::hilbert::DensityOperator;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Population reached the top Fock level beyond the configured threshold.
    #[error("Fock truncation exceeded: {0}")]
    Truncation(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("numerical consistency check failed: {0}")]
    Numerical(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("problem too large: {0}")]
    Capability(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The likelihood iteration hit its iteration cap; the last iterate is kept
    /// so callers can still inspect or use it.
    #[error("maximum-likelihood reconstruction did not converge within {iterations} iterations")]
    NotConverged {
        iterations: usize,
        last: Box<DensityOperator>,
    },
}

impl Error {
    /// True for errors caused by bad numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Truncation(_)
                | Error::Numerical(_)
                | Error::NotConverged { .. }
                | Error::Degenerate(_)
        )
    }
}
