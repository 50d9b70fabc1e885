//! Minimal dense-tensor engine with reverse-mode differentiation and the
//! two-stream detector / forecaster network built on it.
//!
//! The engine is a flat tape: ops append nodes, `backward` walks the tape in
//! reverse with a fixed reduction order, so runs are bit-reproducible.
//! Custom ops (the loss heads live in [`crate::loss`]) implement [`Op`].

mod adam;
mod checkpoint;
mod gradcheck;
mod model;
mod ops;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{check_gradients, check_gradients_sampled, GradCheckReport};
pub use model::{ForwardOutputs, HeadOutputs, Model, NetworkConfig, ParamStore};
pub use ops::{Add, ConcatChannels, Conv2d, ReLU, SoftmaxChannels, SumAll};
pub use tape::{Gradients, Op, Tape, VarId};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("network config invalid: {0}")]
    Config(String),
    #[error("non-finite {what} in parameter {name}")]
    NonFinite { what: &'static str, name: String },
    #[error("checkpoint io: {0}")]
    CheckpointIo(String),
    #[error("checkpoint parse: {0}")]
    CheckpointParse(String),
    #[error("checkpoint tensor {name}: expected shape {expected:?}, found {found:?}")]
    CheckpointShape { name: String, expected: Vec<usize>, found: Vec<usize> },
}
