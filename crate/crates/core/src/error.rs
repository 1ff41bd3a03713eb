use thiserror::Error;

/// Errors raised by the model, theory, simulation and estimation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("unstable configuration: eta*lambda = {eta_lambda} outside (0, {bound}) for beta = {beta}")]
    Stability {
        eta_lambda: f64,
        beta: f64,
        bound: f64,
    },

    #[error("degenerate epoch: {batches} batch(es) per epoch, need at least 2")]
    DegenerateEpoch { batches: usize },

    #[error("trajectory diverged at step {step}: |theta| = {norm:e}")]
    Divergence { step: usize, norm: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("basis is not orthonormal (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
