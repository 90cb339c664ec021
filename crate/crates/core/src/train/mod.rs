//! Training loop, grid search, evaluation metrics and latency measurement.

mod grid;
mod latency;
mod metrics;

use std::path::PathBuf;

use rand::seq::SliceRandom;

pub use grid::{grid_csv, grid_search, grid_search_by, GridCell, GridOutcome, GridSpec};
pub use latency::{hardware_descriptor, latency_bench, time_calls, LatencyReport, MIN_LATENCY_SAMPLES};
pub use metrics::{ClassMetrics, ConfusionMatrix, MetricsReport};

use crate::engine::{Adam, AdamConfig, AdamState, EngineError, Mode, ParamStore, Tape};
use crate::models::{Checkpoint, ForwardCtx, ModelConfig, ModelError};
use crate::pipeline::{batch_windows, compute_class_weights, ClassCounts, LabeledExample, PipelineError, SplitAssignment};
use crate::rng::{derive_seed, stream};
use crate::{ErrorKind, Modality};

/// Parameters of a run are `model.init(derive_seed(seed, &[TAG_INIT]))`.
pub const TAG_INIT: u64 = 0x1417;
const TAG_SHUFFLE: u64 = 0x5f1e;
const TAG_DROPOUT: u64 = 0xd209;

/// Which epoch's parameters a run returns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Highest validation accuracy; ties go to the later epoch.
    #[default]
    BestValidation,
    LastEpoch,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight the loss by inverse training-class frequency.
    pub class_weights: bool,
    pub seed: u64,
    pub selection: Selection,
    /// Batch size for validation and test passes.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_modality(Modality::Signal)
    }
}

impl TrainConfig {
    /// 1000 epochs at batch 128 for signals, 100 at batch 32 for frames.
    pub fn for_modality(m: Modality) -> Self {
        let (epochs, batch_size) = match m {
            Modality::Signal => (1000, 128),
            Modality::Frames => (100, 32),
        };
        TrainConfig {
            epochs,
            batch_size,
            lr: 1e-3,
            class_weights: true,
            seed: 0,
            selection: Selection::BestValidation,
            eval_batch_size: 64,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(TrainError::Config("epochs and batch sizes must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(TrainError::Config(format!("lr must be non-negative, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Loss and accuracy after one epoch. Training figures are averaged over
/// the epoch's train-mode batches and include the L2 term; validation
/// figures come from an eval-mode pass with unweighted cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub fn epoch_csv(stats: &[EpochStats]) -> String {
    let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for e in stats {
        s.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc));
    }
    s
}

/// Result of [`train`]: the selected checkpoint and the full history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
    pub selected_epoch: usize,
}

impl TrainOutcome {
    pub fn selected(&self) -> &EpochStats {
        &self.history[self.selected_epoch - 1]
    }
}

fn engine_to_train(e: EngineError, epoch: usize, batch: usize) -> TrainError {
    match e {
        EngineError::NonFinite { op } => TrainError::DivergedLoss {
            epoch,
            batch,
            detail: format!("non-finite value in {op}"),
        },
        other => TrainError::Engine(other),
    }
}

fn model_to_train(e: ModelError, epoch: usize, batch: usize) -> TrainError {
    match e {
        ModelError::Engine(e) => engine_to_train(e, epoch, batch),
        other => TrainError::Model(other),
    }
}

fn argmax(row: &[f64]) -> usize {
    // first maximum wins
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode predictions and mean unweighted cross-entropy over `examples`.
pub fn predict(
    model: &ModelConfig,
    params: &ParamStore<f64>,
    examples: &[LabeledExample],
    batch_size: usize,
) -> Result<(Vec<usize>, f64), TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let mut preds = Vec::with_capacity(examples.len());
    let mut loss_sum = 0.0;
    let mut no_rng = crate::rng::CountingRng::new(0);
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&LabeledExample> = chunk.iter().collect();
        let labels: Vec<usize> = chunk.iter().map(|e| e.label.id() as usize).collect();
        let mut tape = Tape::no_grad();
        let x = tape.constant(batch_windows(&refs));
        let out = model.forward(&mut tape, params, x, &mut ForwardCtx::new(Mode::Eval, &mut no_rng))?;
        let loss = tape.sce(out.probs, &labels)?;
        loss_sum += tape.value(loss).data()[0] * chunk.len() as f64;
        let k = model.num_classes();
        preds.extend(tape.value(out.probs).data().chunks(k).map(argmax));
    }
    Ok((preds, loss_sum / examples.len() as f64))
}

fn accuracy(preds: &[usize], examples: &[LabeledExample]) -> f64 {
    let hits = preds.iter().zip(examples).filter(|(&p, e)| p == e.label.id() as usize).count();
    hits as f64 / examples.len() as f64
}

/// Train `model` on `split.train`, monitoring `split.validation`.
///
/// Each epoch shuffles the training examples with a stream derived from the
/// seed and epoch, then runs forward → class-weighted cross-entropy + L2 →
/// backward → Adam over the batches. Frozen parameters never move.
pub fn train(model: &ModelConfig, split: &SplitAssignment, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    model.validate()?;
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if split.validation.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let k = model.num_classes();
    let weights = if cfg.class_weights {
        compute_class_weights(&ClassCounts::of(&split.train).0[..k])?
    } else {
        vec![1.0; k]
    };
    let mut params = model.init(derive_seed(cfg.seed, &[TAG_INIT]))?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..Default::default()
    });
    let (l2_names, l2_rate) = model.l2_terms();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore<f64>, AdamState)> = None;
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut stream(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        let mut dropout_rng = stream(cfg.seed, &[TAG_DROPOUT, epoch as u64]);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&LabeledExample> = chunk.iter().map(|&i| &split.train[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|e| e.label.id() as usize).collect();
            let mut tape = Tape::new();
            let x = tape.constant(batch_windows(&batch));
            let out = model
                .forward(&mut tape, &params, x, &mut ForwardCtx::new(Mode::Train, &mut dropout_rng))
                .map_err(|e| model_to_train(e, epoch, bi))?;
            let step = |tape: &mut Tape<f64>| -> Result<_, EngineError> {
                let ce = tape.weighted_sce(out.probs, &labels, &weights)?;
                let vars = l2_names.iter().map(|n| tape.param(&params, n)).collect::<Result<Vec<_>, _>>()?;
                let pen = tape.l2_penalty(&vars, l2_rate)?;
                let loss = tape.add(ce, pen)?;
                let grads = tape.backward(loss)?;
                Ok((loss, grads))
            };
            let (loss, grads) = step(&mut tape).map_err(|e| engine_to_train(e, epoch, bi))?;
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(TrainError::DivergedLoss {
                    epoch,
                    batch: bi,
                    detail: format!("loss {lv}"),
                });
            }
            loss_sum += lv * chunk.len() as f64;
            hits += tape
                .value(out.probs)
                .data()
                .chunks(k)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            params.absorb_grads(&tape, &grads);
            adam.step(&mut params);
            out.commit(&mut params);
        }
        let (val_preds, val_loss) = predict(model, &params, &split.validation, cfg.eval_batch_size)?;
        let val_acc = accuracy(&val_preds, &split.validation);
        let n = split.train.len() as f64;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / n,
            train_acc: hits as f64 / n,
            val_loss,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} acc {:.4} | val loss {:.4} acc {:.4}",
            stats.train_loss,
            stats.train_acc,
            stats.val_loss,
            stats.val_acc
        );
        history.push(stats);
        let take = match cfg.selection {
            Selection::LastEpoch => true,
            Selection::BestValidation => best.as_ref().is_none_or(|b| val_acc >= b.0),
        };
        if take {
            best = Some((val_acc, epoch, params.clone(), adam.state.clone()));
        }
    }
    let (_, selected_epoch, params, adam_state) = best.expect("at least one epoch");
    let sel = history[selected_epoch - 1];
    let checkpoint = Checkpoint {
        config: model.clone(),
        params,
        adam: Some(adam_state),
        seed: cfg.seed,
        meta: serde_json::json!({
            "selected_epoch": selected_epoch,
            "val_acc": sel.val_acc,
            "val_loss": sel.val_loss,
            "train": cfg,
        }),
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        selected_epoch,
    })
}

/// Confusion matrix and derived scores of `ckpt` on `examples`.
pub fn evaluate(ckpt: &Checkpoint, examples: &[LabeledExample], batch_size: usize) -> Result<MetricsReport, TrainError> {
    let (preds, _) = predict(&ckpt.config, &ckpt.params, examples, batch_size)?;
    let mut cm = ConfusionMatrix::new(ckpt.config.num_classes());
    for (e, &p) in examples.iter().zip(&preds) {
        cm.add(e.label.id() as usize, p);
    }
    Ok(MetricsReport::from_matrix(&cm))
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    DivergedLoss { epoch: usize, batch: usize, detail: String },
    #[error("grid search needs at least one l2 and one dropout value")]
    EmptyGrid,
    #[error("latency benchmark needs at least {min} samples, got {got}")]
    TooFewSamples { got: usize, min: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl TrainError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            TrainError::Config(_) | TrainError::EmptyGrid | TrainError::TooFewSamples { .. } => ErrorKind::Config,
            TrainError::DivergedLoss { .. } | TrainError::Engine(EngineError::NonFinite { .. }) => ErrorKind::Numeric,
            TrainError::EmptySplit(_) | TrainError::Engine(_) | TrainError::Io { .. } => ErrorKind::Data,
            TrainError::Model(e) => e.kind(),
            TrainError::Pipeline(e) => e.kind(),
        }
    }
}

#[cfg(test)]
mod tests;
