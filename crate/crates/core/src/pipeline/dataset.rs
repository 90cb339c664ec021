use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::ser::SerializeMap;

use super::augment::{augment_frames, augment_signal_gaussian, FrameAugment};
use super::scale::{apply_scaler, compute_class_weights, fit_scaler, scale_frames, ScalerParams, SCALER_EPSILON};
use super::segment::{segment_windows, split_groups};
use super::split::{oversample_minority, stratified_split, validate_ratios, SplitAssignment, SplitUnit};
use super::{ClassLabel, Group, LabeledExample, PipelineError, Provenance, NUM_CLASSES};
use crate::ingest::{decode_container, encode_container, Recording, RecordingId};
use crate::{par, rng, Activity, Modality, Tensor};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalPipelineConfig {
    /// Window length in rows.
    pub window: usize,
    pub overlap: f64,
    /// Oversampling factor for the groups in `oversample_groups`.
    pub oversample: usize,
    /// Gaussian augmentation σ as a fraction of each channel's training
    /// std; 0 disables augmentation.
    pub noise_fraction: f64,
}

impl Default for SignalPipelineConfig {
    fn default() -> Self {
        SignalPipelineConfig {
            window: 100,
            overlap: 0.5,
            oversample: 3,
            noise_fraction: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FramePipelineConfig {
    /// Frames per clip, after temporal subsampling.
    pub clip_frames: usize,
    /// Keep every `frame_step`-th frame of a segment before windowing.
    pub frame_step: usize,
    pub overlap: f64,
    /// Target `[height, width]`; `None` keeps the source resolution.
    pub frame_size: Option<[usize; 2]>,
    pub oversample: usize,
    /// Augmented variants added per original training clip.
    pub augment_copies: usize,
    pub augment: FrameAugment,
}

impl Default for FramePipelineConfig {
    fn default() -> Self {
        FramePipelineConfig {
            clip_frames: 32,
            frame_step: 1,
            overlap: 0.5,
            frame_size: Some([224, 224]),
            oversample: 1,
            augment_copies: 2,
            augment: FrameAugment::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub intention_seconds: f64,
    pub split_ratios: [f64; 3],
    pub split_unit: SplitUnit,
    pub oversample_groups: Vec<Group>,
    pub scaler_epsilon: f64,
    pub signal: SignalPipelineConfig,
    pub frames: FramePipelineConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            intention_seconds: 1.0,
            split_ratios: [0.7, 0.15, 0.15],
            split_unit: SplitUnit::Recording,
            oversample_groups: vec![Group::Intention],
            scaler_epsilon: SCALER_EPSILON,
            signal: SignalPipelineConfig::default(),
            frames: FramePipelineConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        validate_ratios(self.split_ratios)?;
        if !(self.intention_seconds.is_finite() && self.intention_seconds > 0.0) {
            return Err(PipelineError::BadIntention(self.intention_seconds));
        }
        let s = &self.signal;
        let f = &self.frames;
        if s.window == 0 || f.clip_frames == 0 || f.frame_step == 0 {
            return Err(PipelineError::Config("window lengths and frame_step must be at least 1".into()));
        }
        for o in [s.overlap, f.overlap] {
            if !(0.0..1.0).contains(&o) {
                return Err(PipelineError::Config(format!("overlap {o} outside [0, 1)")));
            }
        }
        if s.oversample == 0 || f.oversample == 0 {
            return Err(PipelineError::BadFactor);
        }
        if !(s.noise_fraction.is_finite() && s.noise_fraction >= 0.0) {
            return Err(PipelineError::NonPositiveSigma(s.noise_fraction));
        }
        if matches!(f.frame_size, Some([0, _]) | Some([_, 0])) {
            return Err(PipelineError::Config("frame_size entries must be positive".into()));
        }
        if !(self.scaler_epsilon > 0.0) {
            return Err(PipelineError::Config("scaler_epsilon must be positive".into()));
        }
        f.augment.validate()
    }
}

/// Per-class example counts, serialized as `{class_name: count}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts(pub [usize; NUM_CLASSES]);

impl ClassCounts {
    pub fn of(examples: &[LabeledExample]) -> Self {
        let mut c = [0; NUM_CLASSES];
        for e in examples {
            c[e.label.id() as usize] += 1;
        }
        ClassCounts(c)
    }

    pub fn get(&self, label: ClassLabel) -> usize {
        self.0[label.id() as usize]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

impl serde::Serialize for ClassCounts {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(NUM_CLASSES))?;
        for l in ClassLabel::ALL {
            m.serialize_entry(l.name(), &self.get(l))?;
        }
        m.end()
    }
}

impl<'de> serde::Deserialize<'de> for ClassCounts {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let m: BTreeMap<String, usize> = BTreeMap::deserialize(d)?;
        let mut c = [0; NUM_CLASSES];
        for (k, v) in m {
            let l = ClassLabel::ALL
                .iter()
                .find(|l| l.name() == k)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown class `{k}`")))?;
            c[l.id() as usize] = v;
        }
        Ok(ClassCounts(c))
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitStats {
    pub before_oversampling: ClassCounts,
    pub after_oversampling: ClassCounts,
    pub final_counts: ClassCounts,
}

/// One `(class, subject)` stratum: split units per split next to the ideal
/// share.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StratumStats {
    pub class: String,
    pub subject: u32,
    pub units: [usize; 3],
    pub ideal: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PrepareStats {
    pub modality: Modality,
    pub recordings: usize,
    pub windows: usize,
    pub split_unit: SplitUnit,
    pub ratios: [f64; 3],
    pub train: SplitStats,
    pub validation: SplitStats,
    pub test: SplitStats,
    pub strata: Vec<StratumStats>,
    /// Largest `|units − ideal|` over all strata and splits.
    pub max_stratum_deviation: f64,
}

/// Splits ready for training, plus what is needed to treat new data the
/// same way.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDataset {
    pub modality: Modality,
    pub seed: u64,
    pub config: PipelineConfig,
    pub split: SplitAssignment,
    /// Fitted on the training split; signals only.
    pub scaler: Option<ScalerParams>,
}

impl PreparedDataset {
    /// Shape of one example window.
    pub fn window_shape(&self) -> Vec<usize> {
        self.split
            .parts()
            .iter()
            .find_map(|p| p.first())
            .map(|e| e.window.shape().to_vec())
            .unwrap_or_default()
    }

    pub fn train_counts(&self) -> ClassCounts {
        ClassCounts::of(&self.split.train)
    }

    /// Inverse-frequency class weights over the training split.
    pub fn class_weights(&self) -> Result<Vec<f64>, PipelineError> {
        compute_class_weights(&self.train_counts().0)
    }
}

const TAG_SPLIT: u64 = 1;
const TAG_OVERSAMPLE: u64 = 2;
const TAG_AUGMENT: u64 = 3;

fn recording_windows(rec: &Recording, cfg: &PipelineConfig) -> Result<Vec<LabeledExample>, PipelineError> {
    let (intention, actual) = split_groups(rec, cfg.intention_seconds)?;
    let mut out = Vec::new();
    for seg in [intention, actual] {
        match rec {
            Recording::Signal(_) => out.extend(segment_windows(&seg, cfg.signal.window, cfg.signal.overlap)?),
            Recording::Frames(_) => {
                let seg = seg.subsample(cfg.frames.frame_step);
                out.extend(segment_windows(&seg, cfg.frames.clip_frames, cfg.frames.overlap)?)
            }
        }
    }
    Ok(out)
}

fn strata_stats(split: &SplitAssignment, unit: SplitUnit) -> Vec<StratumStats> {
    type Key = (ClassLabel, u32);
    let mut units: BTreeMap<Key, [BTreeSet<(RecordingId, Group, u32)>; 3]> = BTreeMap::new();
    for (i, part) in split.parts().iter().enumerate() {
        for e in part.iter() {
            let p = e.provenance;
            let key = match unit {
                SplitUnit::Example => (p.recording, p.group, p.start),
                SplitUnit::Recording => (p.recording, p.group, 0),
            };
            units.entry((e.label, p.recording.subject_id)).or_default()[i].insert(key);
        }
    }
    units
        .into_iter()
        .map(|((label, subject), sets)| {
            let counts = [sets[0].len(), sets[1].len(), sets[2].len()];
            let n: usize = counts.iter().sum();
            StratumStats {
                class: label.name().to_string(),
                subject,
                units: counts,
                ideal: split.ratios.map(|r| r * n as f64),
            }
        })
        .collect()
}

/// Run the whole preprocessing protocol on the recordings of `modality`.
///
/// Order: (frames: scale to `[0, 1]` and resize) → split at the intention
/// boundary → window each segment → stratified split → oversample the
/// training split → augment the training split → (signals: fit the scaler
/// on the training split and apply it to every split).
pub fn prepare(
    recordings: &[Recording],
    modality: Modality,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<(PreparedDataset, PrepareStats), PipelineError> {
    cfg.validate()?;
    let mut recs: Vec<&Recording> = recordings.iter().filter(|r| r.modality() == modality).collect();
    if recs.is_empty() {
        return Err(PipelineError::NoRecordings(modality));
    }
    recs.sort_by_key(|r| r.id());
    let scaled: Vec<Recording>;
    let recs: Vec<&Recording> = if modality == Modality::Frames {
        let target = cfg.frames.frame_size.map(|[h, w]| (h, w));
        scaled = par::map(&recs, |r| match r {
            Recording::Frames(f) => scale_frames(f, target).map(Recording::Frames),
            Recording::Signal(_) => unreachable!(),
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        scaled.iter().collect()
    } else {
        recs
    };
    let windows: Vec<LabeledExample> = par::map(&recs, |r| recording_windows(r, cfg))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut split = stratified_split(&windows, cfg.split_ratios, cfg.split_unit, rng::derive_seed(seed, &[TAG_SPLIT]))?;
    let strata = strata_stats(&split, cfg.split_unit);
    let before = split.parts().map(ClassCounts::of);

    let factor = match modality {
        Modality::Signal => cfg.signal.oversample,
        Modality::Frames => cfg.frames.oversample,
    };
    split.train = oversample_minority(&split.train, factor, &cfg.oversample_groups, rng::derive_seed(seed, &[TAG_OVERSAMPLE]))?;
    let after = split.parts().map(ClassCounts::of);

    let aug_seed = rng::derive_seed(seed, &[TAG_AUGMENT]);
    let mut scaler = None;
    match modality {
        Modality::Signal => {
            if cfg.signal.noise_fraction > 0.0 {
                let originals: Vec<LabeledExample> = split.train.iter().filter(|e| e.provenance.copy == 0).cloned().collect();
                let stats = fit_scaler(&originals, cfg.scaler_epsilon)?;
                let sigma: Vec<f64> = stats
                    .std
                    .iter()
                    .map(|&s| cfg.signal.noise_fraction * s.max(cfg.scaler_epsilon))
                    .collect();
                split.train = par::map(&split.train, |e| augment_signal_gaussian(e, &sigma, aug_seed))
                    .into_iter()
                    .collect::<Result<_, _>>()?;
            }
            let params = fit_scaler(&split.train, cfg.scaler_epsilon)?;
            for part in [&mut split.train, &mut split.validation, &mut split.test] {
                *part = par::map(part, |e| apply_scaler(&params, e)).into_iter().collect::<Result<_, _>>()?;
            }
            scaler = Some(params);
        }
        Modality::Frames => {
            let copies = cfg.frames.augment_copies;
            if copies > 0 {
                let variants: Vec<(usize, u16)> = (0..split.train.len())
                    .flat_map(|i| (1..=copies as u16).map(move |v| (i, v)))
                    .collect();
                let train = &split.train;
                let augmented = par::map(&variants, |&(i, v)| {
                    let mut e = train[i].clone();
                    e.provenance.variant = v;
                    augment_frames(&e, &cfg.frames.augment, aug_seed)
                })
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?;
                split.train.extend(augmented);
            }
        }
    }
    let finals = split.parts().map(ClassCounts::of);
    let max_dev = strata
        .iter()
        .flat_map(|s| (0..3).map(move |i| (s.units[i] as f64 - s.ideal[i]).abs()))
        .fold(0.0, f64::max);
    let split_stats = |i: usize| SplitStats {
        before_oversampling: before[i],
        after_oversampling: after[i],
        final_counts: finals[i],
    };
    let stats = PrepareStats {
        modality,
        recordings: recs.len(),
        windows: windows.len(),
        split_unit: cfg.split_unit,
        ratios: cfg.split_ratios,
        train: split_stats(0),
        validation: split_stats(1),
        test: split_stats(2),
        strata,
        max_stratum_deviation: max_dev,
    };
    let ds = PreparedDataset {
        modality,
        seed,
        config: cfg.clone(),
        split,
        scaler,
    };
    Ok((ds, stats))
}

const MIDS_MAGIC: &[u8; 4] = b"MIDS";
const MIDS_VERSION: u16 = 1;
pub(crate) const INDEX_FILE: &str = "dataset.json";
const SPLIT_NAMES: [&str; 3] = ["train", "validation", "test"];

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitEntry {
    file: String,
    count: usize,
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetIndex {
    format: String,
    version: u16,
    modality: Modality,
    seed: u64,
    window_shape: Vec<usize>,
    classes: Vec<String>,
    splits: BTreeMap<String, SplitEntry>,
    scaler: Option<ScalerParams>,
    pipeline: PipelineConfig,
}

fn encode_examples(examples: &[LabeledExample]) -> Result<Vec<u8>, PipelineError> {
    let mut out = Vec::new();
    out.extend_from_slice(MIDS_MAGIC);
    out.extend_from_slice(&MIDS_VERSION.to_le_bytes());
    out.extend_from_slice(&(examples.len() as u32).to_le_bytes());
    for e in examples {
        let p = &e.provenance;
        out.push(e.label.id());
        out.extend_from_slice(&p.recording.subject_id.to_le_bytes());
        out.push(p.recording.activity.index() as u8);
        out.extend_from_slice(&p.recording.trial.to_le_bytes());
        out.push(p.group.index() as u8);
        out.extend_from_slice(&p.start.to_le_bytes());
        out.extend_from_slice(&p.copy.to_le_bytes());
        out.extend_from_slice(&p.variant.to_le_bytes());
        let w = &e.window;
        let as4 = if w.rank() == 2 {
            w.clone().reshape(&[w.dim(0), w.dim(1), 1, 1]).unwrap()
        } else {
            w.clone()
        };
        let blob = encode_container(&as4)?;
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(&blob);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn decode_examples(bytes: &[u8], modality: Modality, path: &Path) -> Result<Vec<LabeledExample>, PipelineError> {
    let bad = |reason: &str| PipelineError::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 14 || &bytes[..4] != MIDS_MAGIC {
        return Err(bad("not an example file"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]) {
        return Err(bad("checksum mismatch"));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let truncated = || bad("truncated record");
    if r.u16().ok_or_else(truncated)? != MIDS_VERSION {
        return Err(bad("unsupported version"));
    }
    let n = r.u32().ok_or_else(truncated)? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let label = ClassLabel::from_id(r.u8().ok_or_else(truncated)?).ok_or_else(|| bad("bad class id"))?;
        let subject_id = r.u32().ok_or_else(truncated)?;
        let activity = *Activity::ALL
            .get(r.u8().ok_or_else(truncated)? as usize)
            .ok_or_else(|| bad("bad activity id"))?;
        let trial = r.u32().ok_or_else(truncated)?;
        let group = match r.u8().ok_or_else(truncated)? {
            0 => Group::Intention,
            1 => Group::Actual,
            _ => return Err(bad("bad group id")),
        };
        let start = r.u32().ok_or_else(truncated)?;
        let copy = r.u16().ok_or_else(truncated)?;
        let variant = r.u16().ok_or_else(truncated)?;
        let len = r.u32().ok_or_else(truncated)? as usize;
        let blob = r.take(len).ok_or_else(truncated)?;
        let t = decode_container(blob)?;
        let window = match modality {
            Modality::Signal => {
                let (l, c) = (t.dim(0), t.dim(1));
                t.reshape(&[l, c]).map_err(|_| bad("signal window is not [L, C, 1, 1]"))?
            }
            Modality::Frames => t,
        };
        out.push(LabeledExample {
            label,
            window,
            provenance: Provenance {
                recording: RecordingId { subject_id, activity, trial },
                group,
                start,
                copy,
                variant,
            },
        });
    }
    if r.pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Ingest(crate::ingest::IngestError::io(path, e))
}

/// Write `dataset.json` plus one `.mids` file per split into `dir`.
pub fn save_prepared(ds: &PreparedDataset, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut splits = BTreeMap::new();
    for (name, part) in SPLIT_NAMES.iter().zip(ds.split.parts()) {
        let file = format!("{name}.mids");
        let path = dir.join(&file);
        fs::write(&path, encode_examples(part)?).map_err(|e| io_err(&path, e))?;
        splits.insert(name.to_string(), SplitEntry { file, count: part.len() });
    }
    let index = DatasetIndex {
        format: "mids-index".into(),
        version: MIDS_VERSION,
        modality: ds.modality,
        seed: ds.seed,
        window_shape: ds.window_shape(),
        classes: ClassLabel::ALL.iter().map(|l| l.name().to_string()).collect(),
        splits,
        scaler: ds.scaler.clone(),
        pipeline: ds.config.clone(),
    };
    let path = dir.join(INDEX_FILE);
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn load_prepared(dir: &Path) -> Result<PreparedDataset, PipelineError> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let index: DatasetIndex = serde_json::from_str(&text).map_err(|e| PipelineError::Format {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let mut parts = Vec::new();
    for name in SPLIT_NAMES {
        let entry = index.splits.get(name).ok_or_else(|| PipelineError::Format {
            path: path.clone(),
            reason: format!("missing split `{name}`"),
        })?;
        let p = dir.join(&entry.file);
        let bytes = fs::read(&p).map_err(|e| io_err(&p, e))?;
        let examples = decode_examples(&bytes, index.modality, &p)?;
        if examples.len() != entry.count {
            return Err(PipelineError::Format {
                path: p,
                reason: format!("{} examples, index says {}", examples.len(), entry.count),
            });
        }
        parts.push(examples);
    }
    let test = parts.pop().unwrap();
    let validation = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok(PreparedDataset {
        modality: index.modality,
        seed: index.seed,
        config: index.pipeline.clone(),
        split: SplitAssignment {
            train,
            validation,
            test,
            ratios: index.pipeline.split_ratios,
        },
        scaler: index.scaler,
    })
}

/// Stack windows into a batch tensor `[B, ...]` in `f64`.
pub fn batch_windows(examples: &[&LabeledExample]) -> Tensor<f64> {
    let shape = examples[0].window.shape();
    let mut data = Vec::with_capacity(examples.len() * examples[0].window.numel());
    for e in examples {
        data.extend(e.window.data().iter().map(|&v| v as f64));
    }
    let mut full = vec![examples.len()];
    full.extend_from_slice(shape);
    Tensor::from_vec(&full, data)
}
