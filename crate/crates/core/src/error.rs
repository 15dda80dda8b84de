use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    Header(String),

    /// `row` is the zero-based data row (the header is not counted).
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("whitening is singular: retained eigenvalue {value:e} is below the floor {floor:e}")]
    WhiteningSingular { value: f64, floor: f64 },

    #[error("cannot project a zero-length vector onto the unit sphere (norm {norm:e})")]
    ZeroProjection { norm: f64 },

    #[error("pooled covariance is singular even after ridge regularisation")]
    SingularCovariance,

    #[error("no corrector survived the threshold filter ({} clusters rejected)", rejected.len())]
    EmptyEnsemble {
        /// `(cluster_id, c_j)` for every rejected cluster.
        rejected: Vec<(usize, f64)>,
    },

    #[error("unsupported model version {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },

    #[error("model schema violation: {0}")]
    Schema(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the contents of a file or the file system
    /// rather than by the arguments a caller supplied.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Header(_)
                | Error::Parse { .. }
                | Error::Version { .. }
                | Error::Schema(_)
        )
    }
}
