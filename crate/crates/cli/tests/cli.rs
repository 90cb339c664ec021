use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use intentlab::models::load_checkpoint;
use intentlab::pipeline::{load_prepared, ClassLabel, Group, PrepareStats};
use intentlab_cli::main_with;
use serde_json::Value;
use tempfile::TempDir;

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["intentlab"];
    full.extend_from_slice(args);
    main_with(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Default synthetic dataset prepared for signals, shared by all tests.
fn prepared() -> &'static Path {
    static DIR: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    let (_, p) = DIR.get_or_init(|| {
        let tmp = TempDir::new().unwrap();
        let data = tmp.path().join("data");
        let sig = tmp.path().join("sig");
        assert_eq!(cli(&["--out", s(&data), "synth", "--modality", "signal"]), 0);
        assert_eq!(cli(&["--out", s(&sig), "prepare", "--manifest", s(&data.join("manifest.csv"))]), 0);
        (tmp, sig)
    });
    p
}

fn count_files(dir: &Path) -> usize {
    fs::read_dir(dir).map(|d| d.count()).unwrap_or(0)
}

#[test]
fn synth_writes_both_modalities() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("d");
    assert_eq!(cli(&["--out", s(&out), "synth"]), 0);
    assert_eq!(count_files(&out.join("signal")), 48);
    assert_eq!(count_files(&out.join("frames")), 48);
    assert!(out.join("manifest.csv").exists());
    assert!(out.join("config.json").exists());

    let small = tmp.path().join("small");
    assert_eq!(cli(&["--out", s(&small), "synth", "--subjects", "1", "--trials", "1"]), 0);
    assert_eq!(count_files(&small.join("signal")), 4);
    assert_eq!(count_files(&small.join("frames")), 4);
}

#[test]
fn non_empty_out_refused_without_force() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("d");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    assert_eq!(cli(&["--out", s(&out), "synth", "--subjects", "1", "--trials", "1"]), 2);
    assert_eq!(count_files(&out), 1);
    assert_eq!(cli(&["--out", s(&out), "--force", "synth", "--subjects", "1", "--trials", "1"]), 0);
    assert_eq!(fs::read_to_string(out.join("keep.txt")).unwrap(), "x");
}

#[test]
fn exit_codes_by_category() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"train": {"signal": {"epoch": 3}}}"#).unwrap();
    let out = tmp.path().join("o");
    assert_eq!(cli(&["--config", s(&cfg), "--out", s(&out), "synth"]), 2);
    assert!(!out.exists(), "config errors are reported before any output");
    assert_eq!(cli(&["--out", s(&out), "frobnicate"]), 2);
    let missing = tmp.path().join("none/manifest.csv");
    assert_eq!(cli(&["--out", s(&out), "prepare", "--manifest", s(&missing)]), 3);
    let div = tmp.path().join("div");
    let code = cli(&["--out", s(&div), "--threads", "1", "train", "--data", s(prepared()), "--epochs", "1", "--lr", "1e250"]);
    assert_eq!(code, 4);
}

#[test]
fn prepare_oversamples_intention_in_train_only() {
    let stats: PrepareStats = serde_json::from_value(json(&prepared().join("stats.json"))).unwrap();
    for label in ClassLabel::ALL {
        let factor = if label.group() == Group::Intention { 3 } else { 1 };
        assert_eq!(stats.train.after_oversampling.get(label), factor * stats.train.before_oversampling.get(label));
        for split in [&stats.validation, &stats.test] {
            assert_eq!(split.after_oversampling.get(label), split.before_oversampling.get(label));
        }
    }
    for st in &stats.strata {
        for i in 0..3 {
            assert!((st.units[i] as f64 - st.ideal[i]).abs() <= 1.0, "{st:?}");
        }
    }
    let ds = load_prepared(prepared()).unwrap();
    assert_eq!(ds.split.train.len(), stats.train.final_counts.total());

    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let once = tmp.path().join("once");
    assert_eq!(cli(&["--out", s(&data), "synth", "--modality", "signal"]), 0);
    assert_eq!(cli(&["--out", s(&once), "prepare", "--manifest", s(&data.join("manifest.csv")), "--oversample", "1"]), 0);
    let stats: PrepareStats = serde_json::from_value(json(&once.join("stats.json"))).unwrap();
    assert_eq!(stats.train.after_oversampling, stats.train.before_oversampling);
}

#[test]
fn train_is_deterministic_single_threaded() {
    let tmp = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let code = cli(&["--out", s(&out), "--threads", "1", "--seed", "3", "train", "--data", s(prepared()), "--epochs", "2"]);
        assert_eq!(code, 0);
        out
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(fs::read(a.join("epochs.csv")).unwrap(), fs::read(b.join("epochs.csv")).unwrap());
    assert_eq!(fs::read(a.join("checkpoint.milc")).unwrap(), fs::read(b.join("checkpoint.milc")).unwrap());
    assert_eq!(fs::read(a.join("config.json")).unwrap(), fs::read(b.join("config.json")).unwrap());
}

#[test]
fn singleton_grid_equals_train() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path().join("t");
    let g = tmp.path().join("g");
    let data = s(prepared());
    assert_eq!(cli(&["--out", s(&t), "--threads", "1", "train", "--data", data, "--epochs", "2"]), 0);
    assert_eq!(
        cli(&["--out", s(&g), "--threads", "1", "grid", "--data", data, "--epochs", "2", "--l2", "0.05", "--dropout", "0.4"]),
        0
    );
    assert_eq!(fs::read(t.join("epochs.csv")).unwrap(), fs::read(g.join("epochs.csv")).unwrap());
    let (ct, cg) = (load_checkpoint(&t.join("checkpoint.milc")).unwrap(), load_checkpoint(&g.join("checkpoint.milc")).unwrap());
    assert_eq!(ct.config, cg.config);
    assert!(ct.params.same_values(&cg.params));
    assert_eq!(ct.meta, cg.meta);
    let table = fs::read_to_string(g.join("grid.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn eval_matches_recorded_figures() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path().join("t");
    let data = s(prepared());
    assert_eq!(cli(&["--out", s(&t), "train", "--data", data, "--epochs", "2"]), 0);
    let ckpt = t.join("checkpoint.milc");
    let meta = load_checkpoint(&ckpt).unwrap().meta;
    for (split, key) in [("validation", "val_acc"), ("test", "test_acc")] {
        let out = tmp.path().join(split);
        assert_eq!(cli(&["--out", s(&out), "eval", "--checkpoint", s(&ckpt), "--data", data, "--split", split]), 0);
        let m = json(&out.join("metrics.json"));
        assert_eq!(m["accuracy"].as_f64(), meta[key].as_f64(), "{split}");
        assert!(out.join("confusion.csv").exists());
    }
    let summary = json(&t.join("summary.json"));
    assert_eq!(summary["test_acc"], meta["test_acc"]);
}

#[test]
fn bench_reports_both_models() {
    let tmp = TempDir::new().unwrap();
    for model in ["cnnlstm", "toyswin"] {
        let out = tmp.path().join(model);
        assert_eq!(cli(&["--out", s(&out), "bench", "--model", model]), 0);
        let r = json(&out.join("latency.json"));
        assert!(r["samples_ms"].as_array().unwrap().len() >= 100);
        assert!(r["mean_ms"].as_f64().unwrap() > 0.0);
        assert_eq!(r["batch_size"], 1);
        let csv = fs::read_to_string(out.join("latency.csv")).unwrap();
        assert!(csv.contains("# mean_ms,"));
    }
    let out = tmp.path().join("few");
    assert_eq!(cli(&["--out", s(&out), "bench", "--model", "cnnlstm", "--samples", "5"]), 2);
}

#[test]
fn echoed_config_reproduces_run() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let data = s(prepared());
    assert_eq!(cli(&["--out", s(&a), "--threads", "1", "--seed", "5", "train", "--data", data, "--epochs", "1"]), 0);
    let b = tmp.path().join("b");
    let echoed = a.join("config.json");
    assert_eq!(cli(&["--config", s(&echoed), "--out", s(&b), "--threads", "1", "train", "--data", data]), 0);
    assert_eq!(fs::read(a.join("checkpoint.milc")).unwrap(), fs::read(b.join("checkpoint.milc")).unwrap());
}

#[test]
fn refuses_to_write_into_inputs() {
    let data = prepared();
    let before = count_files(data);
    assert_eq!(cli(&["--out", s(data), "--force", "train", "--data", s(data), "--epochs", "1"]), 2);
    assert_eq!(count_files(data), before);
}
