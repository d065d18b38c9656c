use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("iteration did not converge: {0}")]
    NoConvergence(&'static str),
    #[error("invalid state at element {element}, node {node}: rho = {rho}, p = {p}")]
    InvalidState {
        element: usize,
        node: usize,
        rho: f64,
        p: f64,
    },
    #[error("non-finite value at t = {time}, element {element}")]
    NonFinite { time: f64, element: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("missing closure source at t = {0}")]
    MissingSource(f64),
    #[error("non-finite cost at epoch {epoch}, batch {batch}")]
    NonFiniteCost { epoch: usize, batch: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}
