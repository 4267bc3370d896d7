use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("basis size overflow: m={m}, d={d} gives more than {max} tensor terms")]
    BasisOverflow { m: usize, d: usize, max: usize },

    #[error("estimation degeneracy: {0}")]
    Degenerate(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code for the CLI: input problems map to 2, estimation
    /// degeneracies to 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Degenerate(_) | Error::Singular(_) => 3,
            _ => 2,
        }
    }
}
