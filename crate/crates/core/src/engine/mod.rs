//! Dense reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every differentiable operation executed in one
//! forward pass. [`Tape::backward`] walks the record in reverse and
//! accumulates gradients; [`ParamStore::absorb_grads`] copies the gradients
//! of trainable parameters back into the store, where [`Adam`] consumes
//! them.
//!
//! LSTM gate order is `[i, f, g, o]` throughout.

mod adam;
pub mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig, AdamState};
pub use ops::{Activation, BatchNormStats, Padding};
pub use params::{Param, ParamStore};
pub use tape::{Grads, Tape, Var};

/// Train/eval switch for layers whose behaviour differs between the two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("conv1d: kernel of width {kernel} exceeds input length {len}")]
    KernelTooLarge { kernel: usize, len: usize },
    #[error("maxpool1d: window {window} exceeds input length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("dropout: rate {0} outside [0, 1)")]
    RateOutOfRange(f64),
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("regularization rate must be non-negative, got {0}")]
    NegativeRate(f64),
    #[error("embedding width {dim} not divisible by {heads} heads")]
    HeadsDontDivide { dim: usize, heads: usize },
    #[error("extent {extent:?} not divisible by window {window:?}")]
    NotDivisible {
        extent: [usize; 3],
        window: [usize; 3],
    },
    #[error("patch merge needs even spatial dims, got {height}x{width}")]
    OddSpatialDims { height: usize, width: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

pub type EngineResult<T> = Result<T, EngineError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> EngineError {
    EngineError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
