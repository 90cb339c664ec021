use rand::Rng;

use super::*;
use crate::ingest::RecordingId;
use crate::models::CnnLstmConfig;
use crate::pipeline::{ClassLabel, Group, Provenance};
use crate::{Activity, Tensor};

fn example(label: u8, i: usize, rng: &mut impl Rng) -> LabeledExample {
    let l = ClassLabel::from_id(label).unwrap();
    let ch = l.activity().index();
    let amp = if l.group() == Group::Intention { 0.5 } else { 2.0 };
    let data = (0..20 * 4)
        .map(|j| {
            let noise = rng.gen_range(-0.1..0.1);
            if j % 4 == ch {
                amp * ((j / 4) as f32 * 0.7).sin() + noise
            } else {
                noise
            }
        })
        .collect();
    LabeledExample {
        label: l,
        window: Tensor::from_vec(&[20, 4], data),
        provenance: Provenance {
            recording: RecordingId { subject_id: 1, activity: l.activity(), trial: 1 },
            group: l.group(),
            start: i as u32,
            copy: 0,
            variant: 0,
        },
    }
}

fn split(per_class: usize) -> SplitAssignment {
    let mut rng = crate::rng::seeded(3);
    let mut make = |n: usize| {
        let mut v = Vec::new();
        for c in 0..8u8 {
            for i in 0..n {
                v.push(example(c, i, &mut rng));
            }
        }
        v
    };
    SplitAssignment {
        train: make(per_class),
        validation: make(3),
        test: make(3),
        ratios: [0.7, 0.15, 0.15],
    }
}

fn tiny() -> ModelConfig {
    ModelConfig::CnnLstm(CnnLstmConfig {
        length: 20,
        filters: vec![4, 8],
        lstm_units: vec![6, 6],
        dense_hidden: 12,
        dropout: 0.1,
        l2: 1e-4,
        ..Default::default()
    })
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        lr: 1e-2,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn zero_lr_keeps_parameters() {
    let model = tiny();
    let out = train(&model, &split(4), &TrainConfig { lr: 0.0, ..cfg(1) }).unwrap();
    let init = model.init(derive_seed(11, &[TAG_INIT])).unwrap();
    let same = init
        .iter()
        .zip(out.checkpoint.params.iter())
        .all(|(a, b)| a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(same);
    assert_eq!(out.history.len(), 1);
    assert!((0.0..=1.0).contains(&out.history[0].train_acc));
}

#[test]
fn same_seed_same_run() {
    let data = split(4);
    let a = train(&tiny(), &data, &cfg(3)).unwrap();
    let b = train(&tiny(), &data, &cfg(3)).unwrap();
    assert_eq!(epoch_csv(&a.history), epoch_csv(&b.history));
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    let c = train(&tiny(), &data, &TrainConfig { seed: 12, ..cfg(3) }).unwrap();
    assert_ne!(epoch_csv(&a.history), epoch_csv(&c.history));
}

#[test]
fn learns_and_selection_is_reproducible() {
    let data = split(12);
    let out = train(&tiny(), &data, &cfg(25)).unwrap();
    let sel = *out.selected();
    assert!(sel.val_acc > 0.8, "{:?}", out.history);
    assert!(out.history.iter().all(|e| e.val_acc <= sel.val_acc));
    assert!(out.history[sel.epoch..].iter().all(|e| e.val_acc < sel.val_acc));
    let (preds, _) = predict(&out.checkpoint.config, &out.checkpoint.params, &data.validation, 7).unwrap();
    assert_eq!(accuracy(&preds, &data.validation), sel.val_acc);
    let report = evaluate(&out.checkpoint, &data.validation, 64).unwrap();
    assert_eq!(report.accuracy, sel.val_acc);
    assert_eq!(report.total, data.validation.len() as u64);
}

#[test]
fn failure_modes() {
    let mut data = split(2);
    let model = tiny();
    let empty = SplitAssignment { train: vec![], ..data.clone() };
    assert!(matches!(train(&model, &empty, &cfg(1)), Err(TrainError::EmptySplit("train"))));
    data.train[0].window.data_mut()[5] = f32::NAN;
    let err = train(&model, &data, &TrainConfig { batch_size: 64, ..cfg(1) }).unwrap_err();
    assert!(matches!(err, TrainError::DivergedLoss { epoch: 1, batch: 0, .. }), "{err}");
    assert_eq!(err.kind(), ErrorKind::Numeric);
    assert!(matches!(TrainConfig { epochs: 0, ..cfg(1) }.validate(), Err(TrainError::Config(_))));
}

#[test]
fn uniform_weights_flag() {
    let mut data = split(3);
    data.train.retain(|e| e.label != ClassLabel::new(Activity::Holding, Group::Actual));
    assert!(matches!(train(&tiny(), &data, &cfg(1)), Err(TrainError::Pipeline(_))));
    train(&tiny(), &data, &TrainConfig { class_weights: false, ..cfg(1) }).unwrap();
}

#[test]
fn latency_of_a_checkpoint() {
    let model = tiny();
    let ckpt = Checkpoint {
        params: model.init(1).unwrap(),
        config: model,
        adam: None,
        seed: 1,
        meta: serde_json::Value::Null,
    };
    let inputs: Vec<Tensor<f64>> = split(1).test.iter().map(|e| e.window.cast()).collect();
    let r = latency_bench(&ckpt, &inputs, 100, 5).unwrap();
    assert_eq!((r.samples_ms.len(), r.batch_size, r.precision.as_str()), (100, 1, "f32"));
    assert!(r.mean_ms >= 0.0);
}
