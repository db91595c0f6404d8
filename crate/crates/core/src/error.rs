use std::path::PathBuf;

use thiserror::Error;

/// All failure modes surfaced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer dimensions do not line up. The message names both shapes.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A configuration value violates its invariant.
    #[error("config error: {0}")]
    Config(String),

    /// The dataset cannot support the requested operation.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// A batch cannot produce any valid triplet (single class, singleton class, ...).
    #[error("batch composition error: {0}")]
    BatchComposition(String),

    /// An API contract was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    /// A row to be normalized has (numerically) zero norm.
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    /// Training produced a non-finite loss.
    #[error("divergence error: non-finite loss {loss} at epoch {epoch}")]
    Divergence { epoch: usize, loss: f32 },

    /// Input data has no usable structure (e.g. rank-0 matrix for PCA).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A classifier or index is in a state that cannot answer the query.
    #[error("state error: {0}")]
    State(String),

    /// Malformed file contents (model file, image file).
    #[error("format error: {0}")]
    Format(String),

    /// An I/O failure, with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
