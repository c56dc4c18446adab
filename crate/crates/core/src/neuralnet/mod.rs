//! LSTM autoencoder and softmax classifier over graph paths, trained with
//! hand-written backpropagation and Adam.

mod lstm;
mod model;
mod network;
mod paths;
pub mod tensor;
mod training;

use thiserror::Error;

pub use lstm::{lstm_step, LstmParams};
pub use model::{
    ClassifierParams, DecoderParams, EncoderParams, ModelDims, ModelParams, Vocabulary, INIT_SCALE,
};
pub use network::{
    backward, classify, decode, encode, loss1, loss2, loss_parts, one_hot_targets, predict,
    total_loss, FeatureVector, LossParts, Reconstruction, PROB_CLAMP,
};
pub use paths::{graph_paths, graph_to_paths, PathBatch};
pub use training::{accuracy, adam_step, mean_loss, AdamConfig, AdamState, Example, Trainer};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("label `{0}` is not in the vocabulary")]
    UnknownLabel(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}
