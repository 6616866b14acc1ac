use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the tensor engine, the model, and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid kernel size {size}: kernels must be odd and positive")]
    EvenKernel { size: usize },

    #[error("axis {axis} is not a spatial axis of a rank-{rank} tensor")]
    InvalidAxis { axis: String, rank: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} at voxel (b={batch}, x={x}, y={y}, z={z}) is outside [1, {classes}]")]
    LabelOutOfRange {
        label: u32,
        classes: usize,
        batch: usize,
        x: usize,
        y: usize,
        z: usize,
    },

    #[error("non-finite value in {what} at flat index {index}")]
    NonFinite { what: String, index: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("layer {index} ({name}): {source}")]
    Layer {
        index: usize,
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("bad magic {found:?} at offset 0 (expected {expected:?})")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("incompatible format version {found} (this build reads version {expected})")]
    Version { expected: u16, found: u16 },

    #[error("truncated file: {section} missing at offset {offset}")]
    Truncated { section: String, offset: usize },

    #[error("corrupt file at offset {offset}: {detail}")]
    Corrupt { offset: usize, detail: String },

    #[error("spec hash mismatch: checkpoint {checkpoint}, expected {expected}")]
    SpecHash { checkpoint: String, expected: String },

    #[error("I/O error on {path}: {source}")]
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

    /// Wraps an error with the index and name of the layer that produced it.
    pub fn in_layer(self, index: usize, name: impl Into<String>) -> Self {
        Error::Layer {
            index,
            name: name.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
