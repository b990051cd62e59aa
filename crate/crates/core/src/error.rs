use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Block Cholesky failed; `block` is the zero-based timestep index.
    #[error("factorization failed at block {block}: matrix is not positive definite after damping")]
    Factorization { block: usize },

    #[error("dense factorization failed: system is singular")]
    Singular,

    #[error("numerical failure at iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("step called after the episode terminated")]
    EpisodeDone,

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("iLQR failed: {0}")]
    Ilqr(String),

    #[error("all {0} planner restarts failed")]
    AllRestartsFailed(usize),

    #[error("planning failed in episode {episode}: {message}")]
    Episode { episode: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] std::fmt::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ Error::AtIteration { .. } => e,
            e => Error::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
