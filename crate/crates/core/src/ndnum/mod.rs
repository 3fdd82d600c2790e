//! Dense arrays and a define-by-run reverse-mode tape.
//!
//! Every model in the crate (acoustic encoder/decoder and the text baseline)
//! is expressed through the primitives on [`Tape`], so one gradient engine
//! serves training, gradient checks and saliency.

mod gru;
mod real;
mod tape;
mod tensor;

pub use gru::{gru_scan_forward, GruScanSaved};
pub use real::{Precision, Real};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tensor::{axpy, dot, gemm_acc, gemm_nt_acc, gemm_tn_acc};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension error in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("softmax needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("backward seed must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("index error: {0}")]
    Index(String),
}

/// Relative error used by every gradient check: `|a−b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}
