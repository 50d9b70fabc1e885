//! Batch orchestration shared by the CLI and the acceptance suite: dataset
//! synthesis, frame encoding, training, prediction and evaluation.

mod config;
mod data;
mod eval;
mod lock;
mod seeds;
mod train;

pub use config::{EvalSettings, RunConfig, TrainSettings};
pub use data::{
    extract_frame_sample, load_manifest, save_manifest, FrameSample, Manifest, ManifestEntry,
    MANIFEST_NAME,
};
pub use eval::{cmd_eval, cmd_predict, evaluate, predict_scenario, EvalSummary};
pub use lock::DirLock;
pub use seeds::derive_seed;
pub use train::{cmd_synth, cmd_train, TrainResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("output directory {0} is locked by another writer (.lock exists)")]
    Locked(String),
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
    #[error(transparent)]
    ScenarioIo(#[from] crate::scene::ScenarioIoError),
    #[error(transparent)]
    Encoder(#[from] crate::encoder::EncoderError),
    #[error(transparent)]
    Anchor(#[from] crate::anchors::AnchorError),
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
    #[error(transparent)]
    PredictionIo(#[from] crate::infer::PredictionIoError),
    #[error("training aborted at step {step}: {reason}; last checkpoint retained at {checkpoint}")]
    TrainingAborted { step: u64, reason: String, checkpoint: String },
    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    /// Exit code contract: 1 for usage/config errors, 2 for runtime errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            _ => 2,
        }
    }
}
