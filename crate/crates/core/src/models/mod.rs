//! The two classifiers and their persistence.
//!
//! Both models are described by a serializable config, own their
//! parameters in a [`ParamStore`] built by [`ModelConfig::init`], and run
//! on a [`Tape`] via [`ModelConfig::forward`]. Batch-norm running
//! statistics live in the store's buffers and are returned as updates from
//! train-mode passes instead of being mutated in place, so a forward pass
//! is a pure function of its inputs.

mod checkpoint;
mod cnn_lstm;
mod freeze;
mod swin;

use rand::{Rng, RngCore};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use cnn_lstm::CnnLstmConfig;
pub use freeze::{apply_freeze, paper_policy_trainable, FreezePolicy};
pub use swin::{
    build_shift_mask, cyclic_shift_index, partition_index, window_geometry, ToySwinConfig, MASK_NEG,
};

use crate::engine::{EngineError, Mode, ParamStore, Tape, Var};
use crate::pipeline::NUM_CLASSES;
use crate::{ErrorKind, Modality, Real, Tensor};

/// Architecture and regularization of either model.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    CnnLstm(CnnLstmConfig),
    ToySwin(ToySwinConfig),
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::CnnLstm(_) => "cnn_lstm",
            ModelConfig::ToySwin(_) => "toy_swin",
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            ModelConfig::CnnLstm(_) => Modality::Signal,
            ModelConfig::ToySwin(_) => Modality::Frames,
        }
    }

    /// Shape of one example, without the batch axis.
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            ModelConfig::CnnLstm(c) => vec![c.length, c.channels],
            ModelConfig::ToySwin(c) => vec![c.frames, c.height, c.width, 3],
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelConfig::CnnLstm(c) => c.classes,
            ModelConfig::ToySwin(c) => c.classes,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelConfig::CnnLstm(c) => c.validate(),
            ModelConfig::ToySwin(c) => c.validate(),
        }
    }

    /// Fresh parameters (Glorot-uniform weights, zero biases, unit norms)
    /// with the configured freeze policy applied.
    pub fn init(&self, seed: u64) -> Result<ParamStore<f64>, ModelError> {
        self.validate()?;
        let mut rng = crate::rng::stream(seed, &[0x1417]);
        Ok(match self {
            ModelConfig::CnnLstm(c) => c.init(&mut rng),
            ModelConfig::ToySwin(c) => {
                let mut s = c.init(&mut rng);
                apply_freeze(&mut s, c, c.freeze)?;
                s
            }
        })
    }

    /// Class probabilities `[B, K]` for a batch `x` with the input shape
    /// prefixed by the batch size.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<ForwardOut<T>, ModelError> {
        let want = self.input_shape();
        let got = tape.shape(x);
        if got.len() != want.len() + 1 || got[1..] != want[..] || got[0] == 0 {
            return Err(ModelError::InputShape {
                expected: want,
                got: got.to_vec(),
            });
        }
        match self {
            ModelConfig::CnnLstm(c) => c.forward(tape, store, x, ctx),
            ModelConfig::ToySwin(c) => c.forward(tape, store, x, ctx),
        }
    }

    /// Names of the parameters under L2 regularization and the rate.
    pub fn l2_terms(&self) -> (Vec<String>, f64) {
        match self {
            ModelConfig::CnnLstm(c) => (c.l2_params(), c.l2),
            ModelConfig::ToySwin(c) => (c.l2_params(), c.head_l2),
        }
    }

    /// Copy with the grid-searched regularizers replaced.
    pub fn with_regularization(&self, l2: f64, dropout: f64) -> ModelConfig {
        match self {
            ModelConfig::CnnLstm(c) => ModelConfig::CnnLstm(CnnLstmConfig { l2, dropout, ..c.clone() }),
            ModelConfig::ToySwin(c) => ModelConfig::ToySwin(ToySwinConfig {
                head_l2: l2,
                head_dropout: dropout,
                ..c.clone()
            }),
        }
    }

    /// Copy with the input shape replaced by `shape` (one example, no batch
    /// axis).
    pub fn with_input_shape(&self, shape: &[usize]) -> Result<ModelConfig, ModelError> {
        let bad = || ModelError::Config(format!("{} cannot take input {shape:?}", self.name()));
        match (self, shape) {
            (ModelConfig::CnnLstm(c), &[length, channels]) => Ok(ModelConfig::CnnLstm(CnnLstmConfig {
                length,
                channels,
                ..c.clone()
            })),
            (ModelConfig::ToySwin(c), &[frames, height, width, 3]) => Ok(ModelConfig::ToySwin(ToySwinConfig {
                frames,
                height,
                width,
                ..c.clone()
            })),
            _ => Err(bad()),
        }
    }
}

/// Per-pass settings: train/eval mode and the dropout RNG.
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    pub rng: &'a mut dyn RngCore,
}

impl<'a> ForwardCtx<'a> {
    pub fn new(mode: Mode, rng: &'a mut dyn RngCore) -> Self {
        ForwardCtx { mode, rng }
    }
}

/// Output of a forward pass.
pub struct ForwardOut<T> {
    /// `[B, K]` class probabilities.
    pub probs: Var,
    /// New values for store buffers (train mode only).
    pub buffer_updates: Vec<(String, Tensor<T>)>,
}

impl<T: Real> ForwardOut<T> {
    pub fn commit(self, store: &mut ParamStore<T>) -> Var {
        for (name, value) in self.buffer_updates {
            store.set_buffer(name, value);
        }
        self.probs
    }
}

/// Glorot-uniform tensor with the given fan-in and fan-out.
pub(crate) fn glorot<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-limit..limit)).collect())
}

pub(crate) fn check_rate(name: &str, rate: f64) -> Result<(), ModelError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(ModelError::Config(format!("{name} {rate} outside [0, 1)")));
    }
    Ok(())
}

pub(crate) fn check_l2(name: &str, rate: f64) -> Result<(), ModelError> {
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(ModelError::Config(format!("{name} must be non-negative, got {rate}")));
    }
    Ok(())
}

pub(crate) fn check_classes(classes: usize) -> Result<(), ModelError> {
    if classes != NUM_CLASSES {
        log::warn!("model configured for {classes} classes; the label set has {NUM_CLASSES}");
    }
    if classes < 2 {
        return Err(ModelError::Config("at least 2 classes required".into()));
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("expected input [B, {expected:?}], got {got:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("corrupt checkpoint: {0}")]
    CorruptPayload(String),
    #[error("checkpoint does not match configuration: {0}")]
    ConfigMismatch(String),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

impl ModelError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            ModelError::Config(_) | ModelError::ConfigMismatch(_) => ErrorKind::Config,
            ModelError::Engine(EngineError::NonFinite { .. }) => ErrorKind::Numeric,
            ModelError::Engine(_) | ModelError::InputShape { .. } => ErrorKind::Data,
            ModelError::VersionMismatch { .. } | ModelError::CorruptPayload(_) | ModelError::Io { .. } => {
                ErrorKind::Data
            }
        }
    }
}
