use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A field was evaluated outside its domain or produced a non-finite value.
    #[error("domain error: {0}")]
    Domain(String),

    /// The horizontal gradient is too small for the normalized operators.
    #[error("degenerate horizontal gradient: |grad0| = {norm:e} <= threshold {threshold:e}")]
    DegenerateGradient { norm: f64, threshold: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error(
        "fixed-point iteration did not converge at slab {slab} (t = {time}): \
         {iterations} sweeps, last max-change {last_change:e}"
    )]
    Convergence {
        slab: usize,
        time: f64,
        iterations: usize,
        last_change: f64,
        history: Vec<f64>,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
