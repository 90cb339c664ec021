//! `intentlab` command line: synthesize, prepare, train, grid-search,
//! evaluate and benchmark, each writing into its own run directory.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use intentlab::ingest::{load_entry, load_manifest, IngestError, Recording};
use intentlab::models::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig};
use intentlab::pipeline::{load_prepared, prepare, save_prepared, ClassLabel, LabeledExample, PreparedDataset};
use intentlab::synth::{synth_frame_dataset, synth_signal_dataset, write_dataset};
use intentlab::train::{evaluate, grid_csv, grid_search, latency_bench, train, TrainOutcome};
use intentlab::{par, rng, Error, Modality, Tensor};
use rand::Rng;
use serde_json::json;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "intentlab", version, about = "Motion-intention recognition experiments")]
pub struct Cli {
    /// JSON config merged onto the defaults; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Run directory for every output of the command.
    #[arg(long, global = true, value_name = "DIR", default_value = "run")]
    pub out: PathBuf,
    /// Worker threads; 1 gives the reference sequential schedule.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Write into a non-empty run directory.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a manifest.
    Synth(SynthArgs),
    /// Window, split, balance and scale one modality of a manifest.
    Prepare(PrepareArgs),
    /// Train on a prepared dataset.
    Train(TrainArgs),
    /// Train every (l2, dropout) cell and keep the best.
    Grid(GridArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Batch-1 inference latency.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub subjects: Option<u32>,
    #[arg(long)]
    pub trials: Option<u32>,
    /// Seconds per trial.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Only this modality; both by default.
    #[arg(long)]
    pub modality: Option<Modality>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    #[arg(long)]
    pub modality: Option<Modality>,
    /// Oversampling factor for the intention classes.
    #[arg(long)]
    pub oversample: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Prepared dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Comma-separated L2 rates.
    #[arg(long, value_delimiter = ',')]
    pub l2: Vec<f64>,
    /// Comma-separated dropout rates.
    #[arg(long, value_delimiter = ',')]
    pub dropout: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelName {
    #[value(name = "cnnlstm", alias = "cnn-lstm", alias = "cnn_lstm")]
    CnnLstm,
    #[value(name = "toyswin", alias = "toy-swin", alias = "toy_swin")]
    ToySwin,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub model: ModelName,
    /// Trained weights; freshly initialized ones otherwise.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Take inputs from this prepared dataset's test split.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let kind = e.kind();
            eprintln!("error ({kind:?}): {e}");
            kind.exit_code()
        }
    }
}

/// Parse and run; errors are returned instead of mapped to exit codes.
pub fn run<I, T>(args: I) -> Result<(), Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    execute(&cli)
}

pub fn execute(cli: &Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.sync_seed();
    if cli.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let threads = cli.threads.unwrap_or(0);
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, cfg, a, threads),
        Command::Prepare(a) => cmd_prepare(cli, cfg, a, threads),
        Command::Train(a) => cmd_train(cli, cfg, &a.flags, threads),
        Command::Grid(a) => cmd_grid(cli, cfg, a, threads),
        Command::Eval(a) => cmd_eval(cli, cfg, a, threads),
        Command::Bench(a) => cmd_bench(cli, cfg, a, threads),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    IngestError::io(path, e).into()
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn dir_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Validate the config, make sure `out` is a fresh (or forced) directory
/// distinct from every input, and echo the config into it.
fn open_run(cli: &Cli, cfg: &RunConfig, inputs: &[&Path]) -> Result<PathBuf, Error> {
    cfg.validate()?;
    let out = &cli.out;
    if out.exists() {
        if !out.is_dir() {
            return Err(Error::Config(format!("--out {} is not a directory", out.display())));
        }
        let canon = fs::canonicalize(out).map_err(|e| io_err(out, e))?;
        for inp in inputs {
            if fs::canonicalize(inp).ok().as_deref() == Some(canon.as_path()) {
                return Err(Error::Config(format!(
                    "--out {} is an input directory; commands never write into their inputs",
                    out.display()
                )));
            }
        }
        let non_empty = fs::read_dir(out).map_err(|e| io_err(out, e))?.next().is_some();
        if non_empty && !cli.force {
            return Err(Error::Config(format!(
                "refusing to write into non-empty {} (pass --force)",
                out.display()
            )));
        }
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write(&out.join("config.json"), cfg.to_json())?;
    Ok(out.clone())
}

fn cmd_synth(cli: &Cli, mut cfg: RunConfig, a: &SynthArgs, threads: usize) -> Result<(), Error> {
    if let Some(v) = a.subjects {
        cfg.synth.subjects = v;
    }
    if let Some(v) = a.trials {
        cfg.synth.trials = v;
    }
    if let Some(v) = a.duration {
        cfg.synth.duration_s = v;
    }
    let out = open_run(cli, &cfg, &[])?;
    let want = |m: Modality| a.modality.is_none_or(|x| x == m);
    let manifest = par::install(threads, || -> Result<_, Error> {
        let signals = if want(Modality::Signal) { synth_signal_dataset(&cfg.synth)? } else { Vec::new() };
        let frames = if want(Modality::Frames) { synth_frame_dataset(&cfg.synth)? } else { Vec::new() };
        Ok(write_dataset(&out, &signals, &frames)?)
    })?;
    let count = |m: Modality| manifest.of_modality(m).count();
    println!(
        "wrote {} signal recordings and {} frame sequences; manifest {}",
        count(Modality::Signal),
        count(Modality::Frames),
        out.join("manifest.csv").display()
    );
    Ok(())
}

fn cmd_prepare(cli: &Cli, mut cfg: RunConfig, a: &PrepareArgs, threads: usize) -> Result<(), Error> {
    if let Some(m) = a.modality {
        cfg.modality = m;
    }
    if let Some(f) = a.oversample {
        match cfg.modality {
            Modality::Signal => cfg.pipeline.signal.oversample = f,
            Modality::Frames => cfg.pipeline.frames.oversample = f,
        }
    }
    let manifest = load_manifest(&a.manifest)?;
    let out = open_run(cli, &cfg, &[&dir_of(&a.manifest)])?;
    let opts = cfg.ingest.load_options();
    let (ds, stats) = par::install(threads, || -> Result<_, Error> {
        let recs = manifest
            .of_modality(cfg.modality)
            .map(|e| load_entry(&manifest, e, &opts))
            .collect::<Result<Vec<Recording>, _>>()?;
        Ok(prepare(&recs, cfg.modality, &cfg.pipeline, cfg.seed)?)
    })?;
    save_prepared(&ds, &out)?;
    write(&out.join("stats.json"), serde_json::to_string_pretty(&stats).expect("stats serialize"))?;
    println!("{} recordings, {} windows", stats.recordings, stats.windows);
    println!("{:<20} {:>14} {:>14} {:>10} {:>10}", "class", "train before", "train after", "val", "test");
    for label in ClassLabel::ALL {
        println!(
            "{:<20} {:>14} {:>14} {:>10} {:>10}",
            label.name(),
            stats.train.before_oversampling.get(label),
            stats.train.after_oversampling.get(label),
            stats.validation.final_counts.get(label),
            stats.test.final_counts.get(label)
        );
    }
    println!("max stratum deviation {:.3} units", stats.max_stratum_deviation);
    Ok(())
}

fn model_for(cfg: &RunConfig, modality: Modality) -> ModelConfig {
    match modality {
        Modality::Signal => ModelConfig::CnnLstm(cfg.cnn_lstm.clone()),
        Modality::Frames => ModelConfig::ToySwin(cfg.toy_swin.clone()),
    }
}

fn apply_train_flags(cfg: &mut RunConfig, modality: Modality, f: &TrainFlags) {
    let t = cfg.train.get_mut(modality);
    if let Some(v) = f.epochs {
        t.epochs = v;
    }
    if let Some(v) = f.lr {
        t.lr = v;
    }
    if let Some(v) = f.batch_size {
        t.batch_size = v;
    }
}

/// Load the dataset, apply flags and open the run directory.
fn setup_training(cli: &Cli, cfg: &mut RunConfig, f: &TrainFlags) -> Result<(PreparedDataset, ModelConfig, PathBuf), Error> {
    let ds = load_prepared(&f.data)?;
    apply_train_flags(cfg, ds.modality, f);
    let model = model_for(cfg, ds.modality).with_input_shape(&ds.window_shape())?;
    model.validate()?;
    let out = open_run(cli, cfg, &[&f.data])?;
    Ok((ds, model, out))
}

/// Score the selected checkpoint on the test split and write checkpoint,
/// epoch log, test metrics and a summary.
fn write_training(out: &Path, mut outcome: TrainOutcome, ds: &PreparedDataset, batch: usize, extra: serde_json::Value) -> Result<(), Error> {
    let test = evaluate(&outcome.checkpoint, &ds.split.test, batch)?;
    if let Some(meta) = outcome.checkpoint.meta.as_object_mut() {
        meta.insert("test_acc".into(), json!(test.accuracy));
        meta.insert("test_weighted_f1".into(), json!(test.weighted_f1));
    }
    save_checkpoint(&outcome.checkpoint, &out.join("checkpoint.milc"))?;
    write(&out.join("epochs.csv"), intentlab::train::epoch_csv(&outcome.history))?;
    write(&out.join("metrics_test.json"), test.to_json())?;
    let sel = *outcome.selected();
    let mut summary = json!({
        "model": outcome.checkpoint.config.name(),
        "modality": ds.modality,
        "epochs": outcome.history.len(),
        "selected_epoch": sel.epoch,
        "val_acc": sel.val_acc,
        "val_loss": sel.val_loss,
        "test_acc": test.accuracy,
        "test_weighted_f1": test.weighted_f1,
    });
    if let (Some(s), Some(e)) = (summary.as_object_mut(), extra.as_object()) {
        s.extend(e.clone());
    }
    write(&out.join("summary.json"), serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    println!(
        "{}: epoch {} selected (val acc {:.4}); test acc {:.4}, weighted F1 {:.4}",
        outcome.checkpoint.config.name(),
        sel.epoch,
        sel.val_acc,
        test.accuracy,
        test.weighted_f1
    );
    Ok(())
}

fn cmd_train(cli: &Cli, mut cfg: RunConfig, f: &TrainFlags, threads: usize) -> Result<(), Error> {
    let (ds, model, out) = setup_training(cli, &mut cfg, f)?;
    let tcfg = cfg.train.get(ds.modality).clone();
    par::install(threads, || -> Result<(), Error> {
        let outcome = train(&model, &ds.split, &tcfg)?;
        write_training(&out, outcome, &ds, tcfg.eval_batch_size, json!({}))
    })
}

fn cmd_grid(cli: &Cli, mut cfg: RunConfig, a: &GridArgs, threads: usize) -> Result<(), Error> {
    if !a.l2.is_empty() {
        cfg.grid.l2 = a.l2.clone();
    }
    if !a.dropout.is_empty() {
        cfg.grid.dropout = a.dropout.clone();
    }
    let (ds, model, out) = setup_training(cli, &mut cfg, &a.flags)?;
    let tcfg = cfg.train.get(ds.modality).clone();
    par::install(threads, || -> Result<(), Error> {
        let g = grid_search(&model, &ds.split, &tcfg, &cfg.grid)?;
        write(&out.join("grid.csv"), grid_csv(&g.table))?;
        write(&out.join("grid.json"), serde_json::to_string_pretty(&g.table).expect("table serializes"))?;
        println!("best cell: l2 {} dropout {}", g.l2, g.dropout);
        write_training(&out, g.best, &ds, tcfg.eval_batch_size, json!({ "l2": g.l2, "dropout": g.dropout }))
    })
}

fn split_of(ds: &PreparedDataset, s: SplitName) -> &[LabeledExample] {
    match s {
        SplitName::Train => &ds.split.train,
        SplitName::Validation => &ds.split.validation,
        SplitName::Test => &ds.split.test,
    }
}

fn check_compatible(ckpt: &Checkpoint, ds: &PreparedDataset) -> Result<(), Error> {
    if ckpt.config.modality() != ds.modality || ckpt.config.input_shape() != ds.window_shape() {
        return Err(intentlab::pipeline::PipelineError::Format {
            path: PathBuf::from("dataset.json"),
            reason: format!(
                "checkpoint expects {} windows {:?}, dataset has {} windows {:?}",
                ckpt.config.modality(),
                ckpt.config.input_shape(),
                ds.modality,
                ds.window_shape()
            ),
        }
        .into());
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, cfg: RunConfig, a: &EvalArgs, threads: usize) -> Result<(), Error> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let ds = load_prepared(&a.data)?;
    check_compatible(&ckpt, &ds)?;
    let out = open_run(cli, &cfg, &[&a.data, &dir_of(&a.checkpoint)])?;
    let batch = cfg.train.get(ds.modality).eval_batch_size;
    let report = par::install(threads, || evaluate(&ckpt, split_of(&ds, a.split), batch))?;
    write(&out.join("metrics.json"), report.to_json())?;
    let mut csv = String::from("true\\pred");
    for l in ClassLabel::ALL {
        csv.push(',');
        csv.push_str(l.name());
    }
    csv.push('\n');
    for (l, row) in ClassLabel::ALL.iter().zip(&report.matrix.counts) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        csv.push_str(&format!("{},{}\n", l.name(), cells.join(",")));
    }
    write(&out.join("confusion.csv"), csv)?;
    println!(
        "{:?} split: {} examples, accuracy {:.4}, weighted F1 {:.4}",
        a.split, report.total, report.accuracy, report.weighted_f1
    );
    Ok(())
}

const BENCH_INPUTS: usize = 8;
const TAG_BENCH: u64 = 0xbe7c;

fn cmd_bench(cli: &Cli, mut cfg: RunConfig, a: &BenchArgs, threads: usize) -> Result<(), Error> {
    if let Some(v) = a.samples {
        cfg.bench.samples = v;
    }
    if let Some(v) = a.warmup {
        cfg.bench.warmup = v;
    }
    let modality = match a.model {
        ModelName::CnnLstm => Modality::Signal,
        ModelName::ToySwin => Modality::Frames,
    };
    let ckpt = match &a.checkpoint {
        Some(p) => {
            let c = load_checkpoint(p)?;
            if c.config.modality() != modality {
                return Err(Error::Config(format!("{} holds a {} model", p.display(), c.config.name())));
            }
            c
        }
        None => {
            let model = model_for(&cfg, modality);
            Checkpoint {
                params: model.init(cfg.seed)?,
                config: model,
                adam: None,
                seed: cfg.seed,
                meta: json!({ "trained": false }),
            }
        }
    };
    let ds = a.data.as_deref().map(load_prepared).transpose()?;
    if let Some(ds) = &ds {
        check_compatible(&ckpt, ds)?;
    }
    if cfg.bench.samples < intentlab::train::MIN_LATENCY_SAMPLES {
        return Err(Error::Config(format!(
            "bench needs at least {} samples",
            intentlab::train::MIN_LATENCY_SAMPLES
        )));
    }
    let mut inputs_from: Vec<&Path> = a.data.iter().map(|p| p.as_path()).collect();
    let ckpt_dir = a.checkpoint.as_deref().map(dir_of);
    inputs_from.extend(ckpt_dir.as_deref());
    let out = open_run(cli, &cfg, &inputs_from)?;
    let inputs: Vec<Tensor<f64>> = match &ds {
        Some(ds) => ds
            .split
            .test
            .iter()
            .take(BENCH_INPUTS)
            .map(|e| e.window.cast())
            .collect(),
        None => {
            let shape = ckpt.config.input_shape();
            let mut r = rng::stream(cfg.seed, &[TAG_BENCH]);
            (0..BENCH_INPUTS)
                .map(|_| {
                    let n = shape.iter().product();
                    Tensor::from_vec(&shape, (0..n).map(|_| r.gen::<f64>()).collect())
                })
                .collect()
        }
    };
    let report = par::install(threads, || latency_bench(&ckpt, &inputs, cfg.bench.samples, cfg.bench.warmup))?;
    write(&out.join("latency.csv"), report.to_csv())?;
    write(&out.join("latency.json"), serde_json::to_string_pretty(&report).expect("report serializes"))?;
    println!(
        "{} ({}, batch 1): mean {:.3} ms, median {:.3} ms, p95 {:.3} ms over {} samples; {}",
        report.model,
        report.precision,
        report.mean_ms,
        report.median_ms,
        report.p95_ms,
        report.samples_ms.len(),
        report.hardware
    );
    Ok(())
}
