use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    /// Shape algebra violation: mismatched extents, bad axis, indivisible
    /// channel counts and similar.
    #[error("dimension error: {0}")]
    Dim(String),
    /// Input outside an operation's mathematical domain (e.g. nonpositive
    /// timescale passed to the ZOH discretization).
    #[error("domain error: {0}")]
    Domain(String),
    /// Autodiff state misuse: non-scalar loss, double backward, detached
    /// graph.
    #[error("autodiff state error: {0}")]
    State(String),
    /// Invalid model or run configuration.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
