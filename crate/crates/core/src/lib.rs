//! Window memory networks for cloze-style reading comprehension.
//!
//! `corpus` reads and transforms datasets, `models` holds the network and
//! baselines, `training` fits and checkpoints them, `evaluation` scores
//! predictions. `ndcompute` is the small reverse-mode autodiff underneath.

pub mod corpus;
pub mod evaluation;
pub mod models;
pub mod ndcompute;
pub mod training;

pub use corpus::{ClozeInstance, CorpusError, Dataset, EmbeddingTable, EntitySpan, Vocabulary};
pub use evaluation::{EvalError, EvalReport, Prediction};
pub use models::{MemNet, ModelConfig, ModelError, Variant};
pub use ndcompute::{ComputeError, Tensor};
pub use training::{Checkpoint, CheckpointError, TrainConfig, TrainError};

/// Any error the library can produce.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
