//! Motion-intention recognition laboratory.
//!
//! Two modality pipelines share one numeric core:
//!
//! * sEMG text recordings are split into an *Intention* second and the
//!   *Actual* remainder, windowed, balanced, scaled and classified by a
//!   CNN-LSTM.
//! * Frame sequences follow the same labeling and are classified by a
//!   small 3D shifted-window transformer whose block math matches Video
//!   Swin (window attention, cyclic shift with masking, patch merging)
//!   with a configurable freeze policy.
//!
//! Everything numeric runs on [`engine`], a dense reverse-mode autodiff
//! tape over [`Tensor`]. Kernels are data-parallel through [`par`] when the
//! `parallel` feature is enabled; every output element is produced by a
//! single thread in a fixed order, so results are bitwise identical for any
//! thread count.

pub mod engine;
pub mod error;
pub mod ingest;
pub mod models;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use tensor::{Real, Tensor};

/// Activities performed in the drywall installation task, in label order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Lifting,
    Carrying,
    Holding,
    Mounting,
}

impl Activity {
    pub const ALL: [Activity; 4] = [
        Activity::Lifting,
        Activity::Carrying,
        Activity::Holding,
        Activity::Mounting,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Activity::Lifting => "lifting",
            Activity::Carrying => "carrying",
            Activity::Holding => "holding",
            Activity::Mounting => "mounting",
        }
    }
}

impl std::fmt::Display for Activity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Activity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lifting" => Ok(Activity::Lifting),
            "carrying" => Ok(Activity::Carrying),
            "holding" => Ok(Activity::Holding),
            "mounting" => Ok(Activity::Mounting),
            other => Err(format!("unknown activity `{other}`")),
        }
    }
}

/// Data modality of a recording.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    Signal,
    Frames,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Signal => "signal",
            Modality::Frames => "frames",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "signal" => Ok(Modality::Signal),
            "frames" => Ok(Modality::Frames),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}
