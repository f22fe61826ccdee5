use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("unknown station id `{0}`")]
    UnknownStation(String),
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("matrix is not positive definite (non-positive pivot at column {column})")]
    NotPositiveDefinite { column: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::UnknownStation(_) | Error::Csv(_) | Error::Json(_) | Error::Io(_) => 3,
            Error::Mesh(_) | Error::Numerical(_) | Error::NotPositiveDefinite { .. } => 4,
        }
    }
}

/// Opens an input file, naming it in the error.
pub(crate) fn open(path: &std::path::Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}
