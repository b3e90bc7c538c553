use thiserror::Error;

use crate::autodiff::ParamId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    Length { shape: Vec<usize>, len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("unknown parameter {0:?}")]
    UnknownParam(ParamId),

    #[error("invalid loss for task {task}: {value}")]
    InvalidLoss { task: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported test function `{0}`")]
    UnknownFunction(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
