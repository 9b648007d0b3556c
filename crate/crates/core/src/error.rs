// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use crate::{ExpertId, LabelId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("cycle detected in label hierarchy (label {0} lies on a cycle)")]
    Cycle(LabelId),

    #[error("line {line}: edge endpoint {label} is not a declared label")]
    DanglingEdge { line: usize, label: LabelId },

    #[error("unknown label id {0}")]
    UnknownLabel(LabelId),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("example id mismatch for expert {expert}: {msg}")]
    IdMismatch { expert: ExpertId, msg: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("integer overflow while computing {0}")]
    Overflow(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numeric breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::Overflow(_))
    }
}
