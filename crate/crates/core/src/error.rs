use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("layer `{layer}`: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown layer id `{0}`")]
    UnknownLayer(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid rdm: {0}")]
    InvalidRdm(String),

    #[error("degenerate rdm: {0}")]
    DegenerateRdm(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss at epoch {epoch} batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("format: {0}")]
    Format(#[from] FormatError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_layer(self, layer: &str) -> Self {
        Error::Layer {
            layer: layer.to_string(),
            source: Box::new(self),
        }
    }
}

/// Decode failures for the binary and text file formats.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported ndim {0}")]
    BadRank(u32),
    #[error("zero-sized dimension")]
    ZeroDim,
    #[error("truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("element count overflows")]
    Overflow,
    #[error("entry name is not utf-8")]
    BadName,
    #[error("duplicate entry `{0}`")]
    DuplicateName(String),
    #[error("line {line}: expected {expected} cells, found {found}")]
    Ragged {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line} cell {cell}: `{text}` is not a number")]
    NotNumeric {
        line: usize,
        cell: usize,
        text: String,
    },
    #[error("input is not utf-8 text")]
    NotText,
    #[error("no rows")]
    NoRows,
}
