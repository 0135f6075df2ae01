//! Tensor math, layers with analytic gradients, and the Adam optimizer.

pub mod adam;
pub mod layers;
pub mod tensor;

pub use adam::{adam_update, clip_global_norm, AdamConfig, AdamState};
pub use layers::{
    affine_backward, affine_forward, dropout_backward, dropout_forward, embedding_backward, embedding_forward,
    l2_penalty, lstm_backward, lstm_step, sigmoid, softmax, softmax_cross_entropy, AffineParams, CrossEntropy,
    EmbeddingTable, LstmCache, LstmCellParams, LstmStepGrads,
};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("dropout rate must be in [0, 1), got {0}")]
    DropoutRate(f64),
}
