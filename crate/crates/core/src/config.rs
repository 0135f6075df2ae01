//! Flat `key=value` run configuration shared by the CLI subcommands.
//!
//! Every [`ModelConfig`] and [`TrainingConfig`] field is addressable by its
//! field name. Values given on the command line are applied afterwards and
//! take precedence.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::{parse_key_values, CorpusError};
use crate::model::{ModelConfig, ModelError};
use crate::trainer::{TrainError, TrainingConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("unknown config key(s): {0}")]
    Unknown(String),
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_key_values(&text, path)?)
}

/// Applies `kv` to both configs. Keys in `extra` are accepted and left for
/// the caller; any other unrecognised key is an error.
pub fn apply_config(
    kv: &BTreeMap<String, String>,
    model: &mut ModelConfig,
    training: &mut TrainingConfig,
    extra: &[&str],
) -> Result<(), ConfigError> {
    let model_unknown = model.apply_key_values(kv)?;
    let train_unknown = training.apply_key_values(kv)?;
    let unknown: Vec<&str> = model_unknown
        .into_iter()
        .filter(|k| train_unknown.contains(k) && !extra.contains(k))
        .collect();
    if !unknown.is_empty() {
        return Err(ConfigError::Unknown(unknown.join(", ")));
    }
    Ok(())
}

/// Snapshot of both configs as one sorted map.
pub fn snapshot(model: &ModelConfig, training: &TrainingConfig) -> BTreeMap<String, String> {
    let mut all = model.to_key_values();
    all.extend(training.to_key_values());
    all
}
