//! Class-separable synthetic recordings.
//!
//! Signals: each activity drives one dominant channel with its own carrier
//! and modulation, the other channels carry weak cross-talk. The intention
//! second ramps up at reduced amplitude. Subjects differ by per-channel
//! gain. Frames: a tinted Gaussian blob moves along an activity-specific
//! path (vertical, horizontal, diagonal, circular) over a noisy background;
//! the intention second uses a reduced displacement.
//!
//! Generators are pure functions of the spec: all randomness comes from
//! streams derived from `spec.seed` and the recording identity.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::{
    write_frame_container, write_manifest, DatasetManifest, FrameSequence, IngestError, ManifestEntry,
    RecordingId, SignalRecording,
};
use crate::rng::stream;
use crate::{par, Activity, ErrorKind, Modality, Tensor};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub subjects: u32,
    pub trials: u32,
    pub duration_s: f64,
    pub intention_seconds: f64,
    pub sample_rate_hz: u32,
    pub channels: usize,
    /// Carrier frequency (Hz) of each activity's dominant channel.
    pub carriers_hz: [f64; 4],
    /// Amplitude-envelope modulation frequency (Hz) per activity.
    pub modulation_hz: [f64; 4],
    /// Relative amplitude of non-dominant channels.
    pub crosstalk: f64,
    /// Peak intention amplitude relative to the actual motion.
    pub intention_level: f64,
    /// Gaussian noise standard deviation (signal units and frame intensity).
    pub noise: f64,
    /// Per-subject, per-channel gains are drawn from `1 ± spread`.
    pub subject_gain_spread: f64,
    pub fps: u32,
    pub frame_size: [usize; 2],
    pub blob_sigma_px: f64,
    pub motion_amplitude_px: f64,
    pub motion_hz: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            subjects: 3,
            trials: 4,
            duration_s: 2.0,
            intention_seconds: 1.0,
            sample_rate_hz: 500,
            channels: 4,
            carriers_hz: [23.0, 41.0, 67.0, 89.0],
            modulation_hz: [1.0, 1.7, 0.6, 2.3],
            crosstalk: 0.15,
            intention_level: 0.4,
            noise: 0.02,
            subject_gain_spread: 0.2,
            fps: 60,
            frame_size: [32, 32],
            blob_sigma_px: 5.0,
            motion_amplitude_px: 9.0,
            motion_hz: 1.5,
            seed: 0,
        }
    }
}

const TAG_SIGNAL: u64 = 0x5161;
const TAG_FRAMES: u64 = 0xf7a3;
const TAG_GAIN: u64 = 0x6a1e;
const BACKGROUND: f64 = 0.25;
const BLOB_PEAK: f64 = 0.7;
const TINTS: [[f64; 3]; 4] = [[1.0, 0.3, 0.3], [0.3, 1.0, 0.3], [0.3, 0.3, 1.0], [0.9, 0.9, 0.2]];

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::BadSpec(m.to_string()));
        if self.subjects == 0 || self.trials == 0 {
            return bad("subjects and trials must be at least 1");
        }
        if !(self.duration_s > self.intention_seconds && self.intention_seconds > 0.0) {
            return bad("duration must exceed a positive intention period");
        }
        if self.sample_rate_hz == 0 || self.fps == 0 || self.frame_size.contains(&0) {
            return bad("rates and frame size must be positive");
        }
        if self.channels < 4 {
            return bad("at least 4 channels (one dominant channel per activity)");
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if self.carriers_hz.iter().any(|&f| !(f > 0.0 && f < nyquist)) {
            return bad("carriers must lie in (0, sample_rate / 2)");
        }
        for i in 0..4 {
            if self.carriers_hz[i + 1..].contains(&self.carriers_hz[i]) {
                return bad("carrier frequencies must be pairwise distinct");
            }
        }
        if !(0.0..1.0).contains(&self.intention_level) || self.intention_level <= 0.0 {
            return bad("intention_level must be in (0, 1)");
        }
        if !(self.noise >= 0.0 && (0.0..1.0).contains(&self.subject_gain_spread) && (0.0..1.0).contains(&self.crosstalk)) {
            return bad("noise must be non-negative; gain spread and crosstalk in [0, 1)");
        }
        if !(self.blob_sigma_px > 0.0 && self.motion_amplitude_px >= 0.0 && self.motion_hz > 0.0) {
            return bad("blob size and motion frequency must be positive");
        }
        Ok(())
    }

    /// Every (subject, activity, trial), subjects numbered from 1.
    pub fn ids(&self) -> Vec<RecordingId> {
        let mut out = Vec::new();
        for subject_id in 1..=self.subjects {
            for activity in Activity::ALL {
                for trial in 1..=self.trials {
                    out.push(RecordingId {
                        subject_id,
                        activity,
                        trial,
                    });
                }
            }
        }
        out
    }

    fn subject_gains(&self, subject: u32) -> Vec<f64> {
        let mut rng = stream(self.seed, &[TAG_GAIN, subject as u64]);
        (0..self.channels)
            .map(|_| 1.0 + self.subject_gain_spread * rng.gen_range(-1.0..=1.0))
            .collect()
    }

    /// Intention envelope: ramps from 40% to 100% of `intention_level`.
    fn envelope(&self, t: f64) -> f64 {
        if t < self.intention_seconds {
            self.intention_level * (0.4 + 0.6 * t / self.intention_seconds)
        } else {
            1.0
        }
    }
}

fn normal(sd: f64) -> Option<Normal<f64>> {
    (sd > 0.0).then(|| Normal::new(0.0, sd).expect("positive sd"))
}

fn signal_recording(spec: &SynthSpec, id: RecordingId) -> SignalRecording {
    let a = id.activity.index();
    let n = (spec.duration_s * spec.sample_rate_hz as f64).round() as usize;
    let gains = spec.subject_gains(id.subject_id);
    let noise = normal(spec.noise);
    let mut rng = stream(spec.seed, &[TAG_SIGNAL, id.subject_id as u64, a as u64, id.trial as u64]);
    let mut data = Vec::with_capacity(n * spec.channels);
    for i in 0..n {
        let t = i as f64 / spec.sample_rate_hz as f64;
        let env = spec.envelope(t) * (1.0 + 0.3 * (2.0 * PI * spec.modulation_hz[a] * t).sin());
        for c in 0..spec.channels {
            let (amp, freq) = if c == a {
                (1.0, spec.carriers_hz[a])
            } else {
                (spec.crosstalk, spec.carriers_hz[(a + c) % 4])
            };
            let clean = gains[c] * env * amp * (2.0 * PI * freq * t + c as f64).sin();
            let v = clean + noise.map_or(0.0, |d| d.sample(&mut rng));
            data.push(v as f32);
        }
    }
    SignalRecording::new(id, spec.sample_rate_hz, Tensor::from_vec(&[n, spec.channels], data))
        .expect("generated rows are finite and non-empty")
}

/// Blob displacement (dx, dy) in pixels at time `t` for an activity.
pub fn blob_offset(spec: &SynthSpec, activity: Activity, t: f64) -> (f64, f64) {
    let level = if t < spec.intention_seconds { spec.intention_level } else { 1.0 };
    let a = spec.motion_amplitude_px * level;
    let phase = 2.0 * PI * spec.motion_hz * t;
    let s = phase.sin();
    match activity {
        Activity::Lifting => (0.0, -a * s),
        Activity::Carrying => (a * s, 0.0),
        Activity::Holding => (a * s * 0.5f64.sqrt(), a * s * 0.5f64.sqrt()),
        Activity::Mounting => (a * phase.cos(), a * s),
    }
}

fn frame_sequence(spec: &SynthSpec, id: RecordingId) -> FrameSequence {
    let a = id.activity.index();
    let [h, w] = spec.frame_size;
    let frames = (spec.duration_s * spec.fps as f64).round() as usize;
    let noise = normal(spec.noise);
    let mut rng = stream(spec.seed, &[TAG_FRAMES, id.subject_id as u64, a as u64, id.trial as u64]);
    let gain = spec.subject_gains(id.subject_id)[0];
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let inv = 1.0 / (2.0 * spec.blob_sigma_px * spec.blob_sigma_px);
    let mut data = Vec::with_capacity(frames * h * w * 3);
    for f in 0..frames {
        let (dx, dy) = blob_offset(spec, id.activity, f as f64 / spec.fps as f64);
        let (bx, by) = (cx + dx, cy + dy);
        for y in 0..h {
            for x in 0..w {
                let r2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                let blob = BLOB_PEAK * gain.min(1.0) * (-r2 * inv).exp();
                for tint in TINTS[a] {
                    let v = BACKGROUND + blob * tint + noise.map_or(0.0, |d| d.sample(&mut rng));
                    // 8-bit quantization, as decoded video would be
                    data.push(((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32);
                }
            }
        }
    }
    FrameSequence::new(id, spec.fps, Tensor::from_vec(&[frames, h, w, 3], data), true)
        .expect("generated frames lie in [0, 1]")
}

/// One signal recording per (subject, activity, trial), in id order.
pub fn synth_signal_dataset(spec: &SynthSpec) -> Result<Vec<SignalRecording>, SynthError> {
    spec.validate()?;
    Ok(par::map(&spec.ids(), |&id| signal_recording(spec, id)))
}

/// One frame sequence per (subject, activity, trial), values in `[0, 1]`.
pub fn synth_frame_dataset(spec: &SynthSpec) -> Result<Vec<FrameSequence>, SynthError> {
    spec.validate()?;
    Ok(par::map(&spec.ids(), |&id| frame_sequence(spec, id)))
}

fn file_stem(id: RecordingId) -> String {
    format!("s{}_{}_t{}", id.subject_id, id.activity, id.trial)
}

/// Signal rows in the text export layout: a `#` header, then one
/// whitespace-separated row per sample.
pub fn signal_text(rec: &SignalRecording) -> String {
    let mut s = format!(
        "# synthetic sEMG export\n# subject {} activity {} trial {}\n# sampling rate {} Hz, channels {}\n",
        rec.id.subject_id,
        rec.id.activity,
        rec.id.trial,
        rec.sample_rate_hz,
        rec.channels()
    );
    for row in rec.rows.data().chunks(rec.channels()) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(s, "{}", cells.join("\t"));
    }
    s
}

/// Write recordings under `dir` (`signal/*.txt`, `frames/*.ftns`) with a
/// `manifest.csv` listing them, and return the manifest. Frame containers
/// hold raw 8-bit intensities in `[0, 255]`.
pub fn write_dataset(
    dir: &Path,
    signals: &[SignalRecording],
    frames: &[FrameSequence],
) -> Result<DatasetManifest, SynthError> {
    let mut entries = Vec::new();
    let io = |path: &Path, e: std::io::Error| SynthError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mkdir = |sub: &str| -> Result<PathBuf, SynthError> {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| io(&d, e))?;
        Ok(d)
    };
    if !signals.is_empty() {
        let d = mkdir("signal")?;
        for rec in signals {
            let name = format!("{}.txt", file_stem(rec.id));
            let path = d.join(&name);
            std::fs::write(&path, signal_text(rec)).map_err(|e| io(&path, e))?;
            entries.push(entry(rec.id, Path::new("signal").join(name), Modality::Signal));
        }
    }
    if !frames.is_empty() {
        let d = mkdir("frames")?;
        for seq in frames {
            let name = format!("{}.ftns", file_stem(seq.id));
            let raw = if seq.scaled {
                FrameSequence {
                    frames: seq.frames.map(|v| (v * 255.0).round()),
                    scaled: false,
                    ..seq.clone()
                }
            } else {
                seq.clone()
            };
            write_frame_container(&raw, &d.join(&name))?;
            entries.push(entry(seq.id, Path::new("frames").join(name), Modality::Frames));
        }
    }
    let manifest = DatasetManifest {
        base_dir: dir.to_path_buf(),
        entries,
    };
    write_manifest(&manifest, &dir.join("manifest.csv"))?;
    Ok(manifest)
}

fn entry(id: RecordingId, path: PathBuf, modality: Modality) -> ManifestEntry {
    ManifestEntry {
        path,
        subject_id: id.subject_id,
        activity: id.activity,
        trial: id.trial,
        modality,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthesis spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl SynthError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            SynthError::BadSpec(_) => ErrorKind::Config,
            SynthError::Ingest(e) => e.kind(),
            SynthError::Io { .. } => ErrorKind::Data,
        }
    }
}
