use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("input too short: {len} frames, window needs {window}")]
    InputTooShort { len: usize, window: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("stats error: {0}")]
    Stats(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("non-finite training value at step {step}: layer `{layer}`, magnitude {magnitude:e}")]
    NonFinite {
        step: u64,
        layer: String,
        magnitude: f64,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::InputTooShort { .. } => "input_too_short",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Stats(_) => "stats",
            Error::Input(_) => "input",
            Error::Format { .. } => "format",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::NonFinite { .. } => "non_finite",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
