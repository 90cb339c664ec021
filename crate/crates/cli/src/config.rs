//! Run configuration: defaults, config file, flag overrides.
//!
//! The file is a JSON object whose keys mirror [`RunConfig`]. It is merged
//! key by key onto the defaults, so a file only needs the keys it changes;
//! unknown keys anywhere are rejected. Command-line flags are applied last.

use std::path::Path;

use intentlab::ingest::LoadOptions;
use intentlab::models::{CnnLstmConfig, ToySwinConfig};
use intentlab::pipeline::PipelineConfig;
use intentlab::synth::SynthSpec;
use intentlab::train::{GridSpec, TrainConfig};
use intentlab::{Error, Modality};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Zero-based columns of the signal text files that hold the channels.
    pub channel_columns: Vec<usize>,
    pub sample_rate_hz: u32,
    pub fps: u32,
}

impl Default for IngestConfig {
    fn default() -> Self {
        let d = LoadOptions::default();
        IngestConfig {
            channel_columns: d.channel_columns,
            sample_rate_hz: d.sample_rate_hz,
            fps: d.fps,
        }
    }
}

impl IngestConfig {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            channel_columns: self.channel_columns.clone(),
            sample_rate_hz: self.sample_rate_hz,
            fps: self.fps,
        }
    }
}

/// Training settings per modality.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub signal: TrainConfig,
    pub frames: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            signal: TrainConfig::for_modality(Modality::Signal),
            frames: TrainConfig::for_modality(Modality::Frames),
        }
    }
}

impl TrainSection {
    pub fn get(&self, m: Modality) -> &TrainConfig {
        match m {
            Modality::Signal => &self.signal,
            Modality::Frames => &self.frames,
        }
    }

    pub fn get_mut(&mut self, m: Modality) -> &mut TrainConfig {
        match m {
            Modality::Signal => &mut self.signal,
            Modality::Frames => &mut self.frames,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub samples: usize,
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { samples: 100, warmup: 10 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Single seed for synthesis, splitting, augmentation and training; it
    /// replaces `synth.seed` and `train.*.seed`.
    pub seed: u64,
    /// Modality handled by `prepare`.
    pub modality: Modality,
    pub synth: SynthSpec,
    pub ingest: IngestConfig,
    pub pipeline: PipelineConfig,
    pub cnn_lstm: CnnLstmConfig,
    pub toy_swin: ToySwinConfig,
    pub train: TrainSection,
    pub grid: GridSpec,
    pub bench: BenchConfig,
}

/// Recursive merge: objects merge key by key, anything else is replaced.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, Error> {
        let patch: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        if !patch.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let mut value = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        merge(&mut value, patch);
        serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunConfig, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Propagate the top-level seed into the nested configs.
    pub fn sync_seed(&mut self) {
        self.synth.seed = self.seed;
        self.train.signal.seed = self.seed;
        self.train.frames.seed = self.seed;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Validate every section before any compute.
    pub fn validate(&self) -> Result<(), Error> {
        self.synth.validate()?;
        self.pipeline.validate()?;
        self.cnn_lstm.validate()?;
        self.toy_swin.validate()?;
        self.train.signal.validate()?;
        self.train.frames.validate()?;
        if self.ingest.channel_columns.is_empty() {
            return Err(Error::Config("ingest.channel_columns is empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c = RunConfig::from_json(r#"{"train": {"frames": {"epochs": 7}}, "pipeline": {"frames": {"frame_size": [32, 32]}}}"#).unwrap();
        assert_eq!(c.train.frames.epochs, 7);
        assert_eq!(c.train.frames.batch_size, 32);
        assert_eq!(c.train.signal, TrainConfig::for_modality(Modality::Signal));
        assert_eq!(c.pipeline.frames.frame_size, Some([32, 32]));
        assert_eq!(c.pipeline.frames.clip_frames, 32);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [r#"{"epochs": 3}"#, r#"{"train": {"signal": {"epoch": 3}}}"#, r#"{"toy_swin": {"depth": 2}}"#] {
            let err = RunConfig::from_json(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
        assert!(RunConfig::from_json("[]").is_err());
    }

    #[test]
    fn echo_roundtrips() {
        let mut c = RunConfig::from_json(r#"{"seed": 9, "modality": "frames"}"#).unwrap();
        c.sync_seed();
        assert_eq!(c.train.frames.seed, 9);
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(RunConfig::default().validate().ok(), Some(()));
    }

    #[test]
    fn shipped_desk_config_validates() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
        let c = RunConfig::load(&path).unwrap();
        c.validate().unwrap();
        assert_eq!(c.pipeline.frames.frame_size, Some([32, 32]));
        assert_eq!(c.train.frames.epochs, 25);
    }
}
