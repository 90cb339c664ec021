use crate::engine::EngineError;
use crate::ingest::IngestError;
use crate::models::ModelError;
use crate::pipeline::PipelineError;
use crate::synth::SynthError;
use crate::train::TrainError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category; drives CLI exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Io(_) => ErrorKind::Data,
            Error::Ingest(e) => e.kind(),
            Error::Pipeline(e) => e.kind(),
            Error::Engine(_) => ErrorKind::Numeric,
            Error::Model(e) => e.kind(),
            Error::Train(e) => e.kind(),
            Error::Synth(e) => e.kind(),
        }
    }
}
