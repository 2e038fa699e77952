use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("non-finite parameter `{0}`")]
    NonFiniteParameter(String),

    /// A loss term evaluated to NaN or infinity during training.
    #[error("non-finite loss term `{term}` at step {step}")]
    Divergence { term: String, step: u64 },

    #[error("checkpoint corruption: {0}")]
    Corruption(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("cannot decode image {}: {message}", path.display())]
    Image { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
