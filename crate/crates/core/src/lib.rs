//! Category-conditioned word-level LSTM text generation.
//!
//! The pipeline: [`corpus`] turns raw categorical text into framed,
//! windowed training examples; [`model`] is a stacked LSTM that receives a
//! category one-hot at every step; [`trainer`] fits it with stratified
//! sampling and Adam; [`generator`] decodes with an exploration factor; and
//! [`eval`] scores novelty of generated text with phrase-overlap and
//! k-gram Jaccard similarity.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod eval;
pub mod generator;
pub mod manifest;
pub mod model;
pub mod nn;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use corpus::{CategoryTag, Corpus, SentenceRecord, TrainingExample, Vocabulary};
pub use generator::GenerationConfig;
pub use model::{ModelConfig, ModelParams, ModelState};
pub use trainer::{EpochReport, TrainingConfig};
