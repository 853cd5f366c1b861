use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or invalid input data. `row` is 1-based and counts data rows
    /// (the header is row 0) for tabular inputs.
    #[error("{}", match .row { Some(r) => format!("row {r}: {message}"), None => message.clone() })]
    Data { row: Option<usize>, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("joint `{joint}` axis {axis} angle {angle} outside limits [{lo}, {hi}]")]
    LimitViolation {
        joint: String,
        axis: usize,
        angle: f64,
        lo: f64,
        hi: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at iteration {iteration} in term {term}")]
    NonFinite { iteration: usize, term: String },

    #[error("scripted reach `{directive}` is unreachable: {reason}")]
    Unreachable { directive: String, reason: String },

    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn data(row: impl Into<Option<usize>>, message: impl Into<String>) -> Self {
        Error::Data {
            row: row.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::NonFinite { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
