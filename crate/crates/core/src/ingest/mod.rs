//! Reading raw recordings from disk.
//!
//! Signal recordings are whitespace-separated text exports with a `#`
//! header block. Frame sequences are stored in the `FTNS` container, a flat
//! little-endian `f32` tensor with a fixed 24-byte header. A CSV manifest
//! ties files to subject, activity, trial and modality.

mod container;
mod manifest;
mod signal;

use std::path::{Path, PathBuf};

pub use container::{
    decode_container, encode_container, read_frame_container, write_frame_container,
    CONTAINER_HEADER_LEN, CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, ManifestEntry};
pub use signal::parse_signal_text;

use crate::{Activity, ErrorKind, Modality, Tensor};

/// Identity of one recording.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct RecordingId {
    pub subject_id: u32,
    pub activity: Activity,
    pub trial: u32,
}

/// One subject × activity × trial of multichannel sEMG.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalRecording {
    pub id: RecordingId,
    pub sample_rate_hz: u32,
    /// `[N, C]`, one row per sample.
    pub rows: Tensor<f32>,
}

impl SignalRecording {
    pub fn new(id: RecordingId, sample_rate_hz: u32, rows: Tensor<f32>) -> Result<Self, IngestError> {
        if sample_rate_hz == 0 {
            return Err(IngestError::Invalid("sample rate must be positive".into()));
        }
        if rows.rank() != 2 || rows.dim(0) == 0 || rows.dim(1) == 0 {
            return Err(IngestError::Invalid(format!("signal rows must be [N>0, C>0], got {:?}", rows.shape())));
        }
        if !rows.data().iter().all(|v| v.is_finite()) {
            return Err(IngestError::RangeError("signal contains non-finite values".into()));
        }
        Ok(SignalRecording { id, sample_rate_hz, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.rows.dim(1)
    }
}

/// One subject × activity × trial of RGB frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub id: RecordingId,
    pub fps: u32,
    /// `[T, H, W, 3]`.
    pub frames: Tensor<f32>,
    /// Whether values have been mapped into `[0, 1]`.
    pub scaled: bool,
}

impl FrameSequence {
    pub fn new(id: RecordingId, fps: u32, frames: Tensor<f32>, scaled: bool) -> Result<Self, IngestError> {
        if fps == 0 {
            return Err(IngestError::Invalid("frame rate must be positive".into()));
        }
        if frames.rank() != 4 || frames.dim(0) == 0 || frames.dim(3) != 3 {
            return Err(IngestError::Invalid(format!("frames must be [T>0, H, W, 3], got {:?}", frames.shape())));
        }
        check_frame_values(frames.data(), scaled)?;
        Ok(FrameSequence { id, fps, frames, scaled })
    }

    pub fn len(&self) -> usize {
        self.frames.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn check_frame_values(data: &[f32], scaled: bool) -> Result<(), IngestError> {
    if let Some(v) = data.iter().find(|v| !v.is_finite()) {
        return Err(IngestError::RangeError(format!("non-finite frame value {v}")));
    }
    if scaled {
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(IngestError::RangeError(format!("scaled frame value {v} outside [0, 1]")));
        }
    }
    Ok(())
}

/// A recording of either modality.
#[derive(Clone, Debug, PartialEq)]
pub enum Recording {
    Signal(SignalRecording),
    Frames(FrameSequence),
}

impl Recording {
    pub fn id(&self) -> RecordingId {
        match self {
            Recording::Signal(s) => s.id,
            Recording::Frames(f) => f.id,
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            Recording::Signal(_) => Modality::Signal,
            Recording::Frames(_) => Modality::Frames,
        }
    }
}

/// Settings needed to turn manifest entries into recordings.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadOptions {
    pub channel_columns: Vec<usize>,
    pub sample_rate_hz: u32,
    pub fps: u32,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            channel_columns: vec![0, 1, 2, 3],
            sample_rate_hz: 500,
            fps: 60,
        }
    }
}

/// Load every entry of `manifest`, in manifest order.
pub fn load_recordings(manifest: &DatasetManifest, opts: &LoadOptions) -> Result<Vec<Recording>, IngestError> {
    manifest
        .entries
        .iter()
        .map(|e| load_entry(manifest, e, opts))
        .collect()
}

pub fn load_entry(manifest: &DatasetManifest, entry: &ManifestEntry, opts: &LoadOptions) -> Result<Recording, IngestError> {
    let path = manifest.resolve(entry);
    let id = entry.id();
    Ok(match entry.modality {
        Modality::Signal => {
            let rows = parse_signal_text(&path, &opts.channel_columns)?;
            Recording::Signal(SignalRecording::new(id, opts.sample_rate_hz, rows)?)
        }
        Modality::Frames => {
            let frames = read_frame_container(&path)?;
            Recording::Frames(FrameSequence::new(id, opts.fps, frames, false)?)
        }
    })
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow { path: PathBuf, line: usize, reason: String },
    #[error("{0}: no data rows")]
    EmptyRecording(PathBuf),
    #[error("channel columns must be non-empty and distinct, got {0:?}")]
    BadChannels(Vec<usize>),
    #[error("not a frame container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported container dtype {0}")]
    UnsupportedDtype(u8),
    #[error("payload of {actual} bytes does not match header ({expected} bytes)")]
    DimensionMismatch { expected: u64, actual: u64 },
    #[error("value out of range: {0}")]
    RangeError(String),
    #[error("manifest line {line}, field `{field}`: {reason}")]
    ParseError { line: usize, field: &'static str, reason: String },
    #[error("manifest lists {0} more than once")]
    DuplicatePath(PathBuf),
    #[error("invalid recording: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl IngestError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            IngestError::BadChannels(_) => ErrorKind::Config,
            _ => ErrorKind::Data,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            IngestError::MissingFile(path.to_path_buf())
        } else {
            IngestError::Io { path: path.to_path_buf(), source }
        }
    }
}
