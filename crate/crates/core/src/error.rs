use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {0:?}: extents must be positive and at most 4 axes")]
    InvalidShape(Vec<usize>),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("index {index} out of range (len {len}) in {what}")]
    Bounds {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid index map: {0}")]
    IndexMap(String),

    #[error("network spec: {0}")]
    Spec(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite values first seen in layer {layer} ({kind})")]
    Diverged {
        epoch: usize,
        batch: usize,
        layer: usize,
        kind: &'static str,
    },

    #[error("{what}: parse error at byte {offset}: {msg}")]
    Parse {
        what: &'static str,
        offset: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("benchmark: {0}")]
    Bench(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
