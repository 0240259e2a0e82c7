use std::path::PathBuf;

/// Errors raised anywhere in the simulation, training and control pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical blow-up in field `{field}` at t = {t:.6e} s")]
    BlowUp { field: String, t: f64 },

    #[error("non-finite gradient in parameter tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("config hash mismatch ({expected} vs {found}): {diff}")]
    ConfigMismatch {
        expected: String,
        found: String,
        diff: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by a diverging simulation.
    pub fn is_blow_up(&self) -> bool {
        matches!(self, Error::BlowUp { .. } | Error::NonFiniteGradient(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
