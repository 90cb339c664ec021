//! From recordings to labeled, balanced, scaled train/validation/test
//! splits.
//!
//! Each recording is cut at the intention boundary into an *Intention*
//! segment and an *Actual* segment; windows are taken per segment so no
//! window ever straddles the boundary. See [`prepare`] for the full order
//! of operations.

mod augment;
mod dataset;
mod scale;
mod segment;
mod split;

use std::fmt;
use std::path::PathBuf;

pub use augment::{augment_frames, augment_signal_gaussian, FrameAugment, FrameTransform};
pub use dataset::{
    load_prepared, prepare, save_prepared, ClassCounts, PipelineConfig, PrepareStats, PreparedDataset,
    SignalPipelineConfig, FramePipelineConfig, SplitStats, StratumStats, batch_windows,
};
pub use scale::{
    apply_scaler, compute_class_weights, fit_scaler, resize_bilinear, scale_frames, ScalerParams,
    SCALER_EPSILON,
};
pub use segment::{segment_windows, split_groups, window_starts, GroupSegment};
pub use split::{oversample_minority, stratified_split, SplitAssignment, SplitUnit};

use crate::ingest::{IngestError, RecordingId};
use crate::{Activity, ErrorKind, Modality, Tensor};

pub const NUM_CLASSES: usize = 8;

/// Which side of the intention boundary a segment lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Intention,
    Actual,
}

impl Group {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// The eight target classes, in class-id order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLabel {
    LiftingIntention,
    ActualLifting,
    CarryingIntention,
    ActualCarrying,
    HoldingIntention,
    ActualHolding,
    MountingIntention,
    ActualMounting,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::LiftingIntention,
        ClassLabel::ActualLifting,
        ClassLabel::CarryingIntention,
        ClassLabel::ActualCarrying,
        ClassLabel::HoldingIntention,
        ClassLabel::ActualHolding,
        ClassLabel::MountingIntention,
        ClassLabel::ActualMounting,
    ];

    pub fn new(activity: Activity, group: Group) -> Self {
        Self::ALL[activity.index() * 2 + group.index()]
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn activity(self) -> Activity {
        Activity::ALL[self.id() as usize / 2]
    }

    pub fn group(self) -> Group {
        if self.id().is_multiple_of(2) {
            Group::Intention
        } else {
            Group::Actual
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::LiftingIntention => "lifting_intention",
            ClassLabel::ActualLifting => "actual_lifting",
            ClassLabel::CarryingIntention => "carrying_intention",
            ClassLabel::ActualCarrying => "actual_carrying",
            ClassLabel::HoldingIntention => "holding_intention",
            ClassLabel::ActualHolding => "actual_holding",
            ClassLabel::MountingIntention => "mounting_intention",
            ClassLabel::ActualMounting => "actual_mounting",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a window came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Provenance {
    pub recording: RecordingId,
    pub group: Group,
    /// Start index of the window inside its group segment.
    pub start: u32,
    /// Oversampling duplicate index; 0 for the original.
    pub copy: u16,
    /// Augmented-variant index; 0 for the unaugmented window.
    pub variant: u16,
}

impl Provenance {
    /// The split unit when whole recordings are kept together.
    pub fn recording_key(&self) -> (RecordingId, Group) {
        (self.recording, self.group)
    }

    pub(crate) fn seed_tags(&self) -> [u64; 7] {
        [
            self.recording.subject_id as u64,
            self.recording.activity.index() as u64,
            self.recording.trial as u64,
            self.group.index() as u64,
            self.start as u64,
            self.copy as u64,
            self.variant as u64,
        ]
    }
}

/// One classification example. `window` has time on axis 0: `[L, C]` for
/// signals, `[F, H, W, 3]` for frames.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub label: ClassLabel,
    pub window: Tensor<f32>,
    pub provenance: Provenance,
}

impl LabeledExample {
    pub fn modality(&self) -> Modality {
        if self.window.rank() == 4 {
            Modality::Frames
        } else {
            Modality::Signal
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("recording of {len} samples is not longer than the intention boundary at {boundary}")]
    TooShort { len: usize, boundary: usize },
    #[error("intention window must be positive and finite, got {0} s")]
    BadIntention(f64),
    #[error("invalid split ratios: {0}")]
    BadRatios(String),
    #[error("class {0} has no examples")]
    EmptyClass(ClassLabel),
    #[error("oversampling factor must be at least 1")]
    BadFactor,
    #[error("noise standard deviation must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("augmentation parameter out of range: {0}")]
    BadRange(String),
    #[error("cannot fit a scaler on an empty training set")]
    EmptyInput,
    #[error("scaler has {expected} channels, example has {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("pixel value {0} outside [0, 255]")]
    OutOfRange(f32),
    #[error("class {0} has zero examples; cannot weight it")]
    ZeroCountClass(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no recordings of modality {0}")]
    NoRecordings(Modality),
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

impl PipelineError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PipelineError::BadIntention(_)
            | PipelineError::BadRatios(_)
            | PipelineError::BadFactor
            | PipelineError::NonPositiveSigma(_)
            | PipelineError::BadRange(_)
            | PipelineError::Config(_) => ErrorKind::Config,
            PipelineError::Ingest(e) => e.kind(),
            _ => ErrorKind::Data,
        }
    }
}
