//! Mini-batch training with per-category stratified sampling.
//!
//! Batches are assembled on a helper thread and handed to the optimizer
//! loop through a bounded channel. The sampler and dropout each own a
//! seeded RNG, so a run is a pure function of (seed, data, config).

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{load_dataset, reverse_record, CategoryTag, Corpus, CorpusError, TrainingExample};
use crate::embeddings::{load_pretrained, EmbeddingError};
use crate::model::{argmax, backward_sequence, forward_sequence, ModelConfig, ModelError, ModelParams};
use crate::nn::{adam_update, clip_global_norm, AdamConfig, AdamState};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("category weights: {0}")]
    Weights(String),
    #[error("category {0} has positive weight but no examples")]
    EmptyCategory(usize),
    #[error("corpus has no training examples")]
    EmptyCorpus,
    #[error("non-finite loss at epoch {epoch}, step {step} (batch example ids {example_ids:?})")]
    NonFinite {
        epoch: usize,
        step: usize,
        example_ids: Vec<usize>,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("unknown experiment {0:?} (expected just-jokes, forward-reverse or three-category)")]
    UnknownExperiment(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("{0}")]
    Callback(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub rng_seed: u64,
    /// Per-category sampling probabilities; empty means uniform.
    pub category_weights: Vec<f64>,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rng_seed: 0,
            category_weights: Vec::new(),
            checkpoint_every: 0,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainingConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Explicit weights, or uniform over `num_categories`.
    pub fn resolved_weights(&self, num_categories: usize) -> Result<Vec<f64>, TrainError> {
        if self.category_weights.is_empty() {
            return Ok(vec![1.0 / num_categories as f64; num_categories]);
        }
        let w = &self.category_weights;
        if w.len() != num_categories {
            return Err(TrainError::Weights(format!(
                "{} weights for {num_categories} categories",
                w.len()
            )));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(TrainError::Weights("weights must be finite and non-negative".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TrainError::Weights(format!("weights sum to {sum}, expected 1")));
        }
        Ok(w.clone())
    }

    pub fn to_key_values(&self) -> BTreeMap<String, String> {
        let weights = self
            .category_weights
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",");
        [
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("rng_seed", self.rng_seed.to_string()),
            ("category_weights", weights),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            (
                "clip_norm",
                self.clip_norm.map_or("none".to_string(), |c| c.to_string()),
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Applies recognised keys; returns the keys it did not recognise.
    pub fn apply_key_values<'a>(&mut self, kv: &'a BTreeMap<String, String>) -> Result<Vec<&'a str>, TrainError> {
        let mut unknown = Vec::new();
        for (k, v) in kv {
            let bad = || TrainError::Config(format!("invalid value {v:?} for {k}"));
            match k.as_str() {
                "batch_size" => self.batch_size = v.parse().map_err(|_| bad())?,
                "epochs" => self.epochs = v.parse().map_err(|_| bad())?,
                "lr" => self.lr = v.parse().map_err(|_| bad())?,
                "beta1" => self.beta1 = v.parse().map_err(|_| bad())?,
                "beta2" => self.beta2 = v.parse().map_err(|_| bad())?,
                "eps" => self.eps = v.parse().map_err(|_| bad())?,
                "rng_seed" => self.rng_seed = v.parse().map_err(|_| bad())?,
                "checkpoint_every" => self.checkpoint_every = v.parse().map_err(|_| bad())?,
                "category_weights" => {
                    self.category_weights = if v.is_empty() {
                        Vec::new()
                    } else {
                        v.split(',')
                            .map(|s| s.trim().parse())
                            .collect::<Result<_, _>>()
                            .map_err(|_| bad())?
                    }
                }
                "clip_norm" => {
                    self.clip_norm = match v.as_str() {
                        "none" | "off" | "0" => None,
                        s => Some(s.parse().map_err(|_| bad())?),
                    }
                }
                _ => unknown.push(k.as_str()),
            }
        }
        Ok(unknown)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub next_token_accuracy: f64,
    pub wall_time: f64,
}

impl EpochReport {
    /// `epoch<TAB>loss<TAB>accuracy<TAB>seconds`
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.3}",
            self.epoch, self.mean_loss, self.next_token_accuracy, self.wall_time
        )
    }
}

/// Training windows grouped by category.
#[derive(Debug, Clone)]
pub struct ExamplePool {
    pub examples: Vec<TrainingExample>,
    by_category: Vec<Vec<usize>>,
}

impl ExamplePool {
    pub fn new(examples: Vec<TrainingExample>, num_categories: usize) -> Self {
        let mut by_category = vec![Vec::new(); num_categories];
        for (i, ex) in examples.iter().enumerate() {
            by_category[ex.category.0].push(i);
        }
        Self { examples, by_category }
    }

    pub fn from_corpus(corpus: &Corpus, seq_len: usize) -> Self {
        Self::new(corpus.examples(seq_len), corpus.num_categories)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn category_len(&self, c: usize) -> usize {
        self.by_category[c].len()
    }
}

/// Example indices for one batch: each draw picks a category from
/// `weights`, then an example uniformly within it.
pub fn stratified_indices<R: Rng + ?Sized>(
    pool: &ExamplePool,
    weights: &[f64],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>, TrainError> {
    if weights.len() != pool.by_category.len() {
        return Err(TrainError::Weights(format!(
            "{} weights for {} categories",
            weights.len(),
            pool.by_category.len()
        )));
    }
    if let Some(c) = (0..weights.len()).find(|&c| weights[c] > 0.0 && pool.by_category[c].is_empty()) {
        return Err(TrainError::EmptyCategory(c));
    }
    if batch_size == 0 {
        return Ok(Vec::new());
    }
    let dist = WeightedIndex::new(weights).map_err(|e| TrainError::Weights(e.to_string()))?;
    Ok((0..batch_size)
        .map(|_| {
            let bucket = &pool.by_category[dist.sample(rng)];
            bucket[rng.gen_range(0..bucket.len())]
        })
        .collect())
}

pub fn stratified_batch<R: Rng + ?Sized>(
    pool: &ExamplePool,
    weights: &[f64],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<TrainingExample>, TrainError> {
    Ok(stratified_indices(pool, weights, batch_size, rng)?
        .into_iter()
        .map(|i| pool.examples[i].clone())
        .collect())
}

/// Steps per epoch: `|examples| / batch_size`, at least one.
pub fn steps_per_epoch(examples: usize, batch_size: usize) -> usize {
    (examples / batch_size).max(1)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub reports: Vec<EpochReport>,
}

/// Trains from a fresh seeded initialisation.
pub fn train(
    corpus: &Corpus,
    cfg: &TrainingConfig,
    mcfg: &ModelConfig,
) -> Result<(ModelParams, Vec<EpochReport>), TrainError> {
    let params = ModelParams::init(mcfg, cfg.rng_seed)?;
    let out = train_from(corpus, cfg, mcfg, params, None, |_, _, _| Ok(()))?;
    Ok((out.params, out.reports))
}

/// Trains starting from `params` (and optional optimizer state). `on_epoch`
/// runs after every epoch with the report, parameters and optimizer state.
pub fn train_from<F>(
    corpus: &Corpus,
    cfg: &TrainingConfig,
    mcfg: &ModelConfig,
    mut params: ModelParams,
    optimizer: Option<AdamState>,
    mut on_epoch: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&EpochReport, &ModelParams, &AdamState) -> Result<(), TrainError>,
{
    cfg.validate()?;
    mcfg.validate()?;
    params.check_shapes(mcfg)?;
    if corpus.num_categories != mcfg.num_categories {
        return Err(TrainError::Config(format!(
            "corpus has {} categories, model expects {}",
            corpus.num_categories, mcfg.num_categories
        )));
    }
    let pool = ExamplePool::from_corpus(corpus, mcfg.seq_len);
    if pool.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let weights = cfg.resolved_weights(mcfg.num_categories)?;
    // Fail before spawning the sampler if a weighted category is empty.
    stratified_indices(&pool, &weights, 0, &mut ChaCha8Rng::seed_from_u64(0))?;

    let shapes = params.trainable_shapes();
    let mut adam = optimizer.unwrap_or_else(|| {
        let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        AdamState::new(&refs)
    });
    let adam_cfg = cfg.adam();
    let steps = steps_per_epoch(pool.len(), cfg.batch_size);
    let total = steps * cfg.epochs;
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(2));

    std::thread::scope(|scope| -> Result<(), TrainError> {
        let (tx, rx) = sync_channel::<Vec<usize>>(8);
        let pool_ref = &pool;
        let weights_ref = &weights;
        let batch_size = cfg.batch_size;
        let sampler_seed = cfg.rng_seed.wrapping_add(1);
        scope.spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(sampler_seed);
            for _ in 0..total {
                let Ok(ids) = stratified_indices(pool_ref, weights_ref, batch_size, &mut rng) else {
                    return;
                };
                if tx.send(ids).is_err() {
                    return;
                }
            }
        });

        for epoch in 1..=cfg.epochs {
            let started = Instant::now();
            let mut loss_sum = 0.0;
            let mut correct = 0;
            let mut count = 0;
            for step in 1..=steps {
                let ids = rx.recv().expect("batch sampler stopped early");
                let batch: Vec<TrainingExample> = ids.iter().map(|&i| pool.examples[i].clone()).collect();
                let fwd = forward_sequence(&params, mcfg, &batch, true, &mut dropout_rng)?;
                if !fwd.loss.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        step,
                        example_ids: ids,
                    });
                }
                loss_sum += fwd.loss;
                correct += fwd.correct;
                count += fwd.count;
                let mut grads = backward_sequence(&params, mcfg, &fwd);
                if let Some(max) = cfg.clip_norm {
                    clip_global_norm(&mut grads.tensors_mut(), max);
                }
                adam_update(&mut params.trainable_mut(), &grads.tensors(), &mut adam, &adam_cfg);
            }
            let report = EpochReport {
                epoch,
                mean_loss: loss_sum / steps as f64,
                next_token_accuracy: if count == 0 { 0.0 } else { correct as f64 / count as f64 },
                wall_time: started.elapsed().as_secs_f64(),
            };
            log::info!("{}", report.log_line());
            on_epoch(&report, &params, &adam)?;
            reports.push(report);
        }
        Ok(())
    })?;

    Ok(TrainOutcome {
        params,
        optimizer: adam,
        reports,
    })
}

/// Inference-mode loss and next-token accuracy over `examples`.
pub fn evaluate(
    params: &ModelParams,
    mcfg: &ModelConfig,
    examples: &[TrainingExample],
) -> Result<(f64, f64), TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut weighted_ce = 0.0;
    let mut correct = 0;
    let mut count = 0;
    for chunk in examples.chunks(64) {
        let f = forward_sequence(params, mcfg, chunk, false, &mut rng)?;
        weighted_ce += f.cross_entropy * f.count as f64;
        correct += f.correct;
        count += f.count;
    }
    if count == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((weighted_ce / count as f64, correct as f64 / count as f64))
}

/// Counts per position whether the argmax prediction equals the target.
pub fn position_hits(
    params: &ModelParams,
    mcfg: &ModelConfig,
    example: &TrainingExample,
) -> Result<Vec<Option<bool>>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let f = forward_sequence(params, mcfg, std::slice::from_ref(example), false, &mut rng)?;
    Ok(f.logits
        .iter()
        .enumerate()
        .map(|(t, l)| example.loss_mask[t].then(|| argmax(l.row(0)) == example.target_ids[t]))
        .collect())
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    /// Category 0 only, single-category model.
    JustJokes,
    /// Category 0 forward plus its word reversal under category 1.
    ForwardReverse,
    /// Every category of the dataset (joke, quote, tweet for the reference
    /// data; fewer or more if the dataset declares them).
    ThreeCategory,
}

impl FromStr for Experiment {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "just-jokes" => Ok(Self::JustJokes),
            "forward-reverse" => Ok(Self::ForwardReverse),
            "three-category" => Ok(Self::ThreeCategory),
            other => Err(TrainError::UnknownExperiment(other.to_string())),
        }
    }
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::JustJokes => "just-jokes",
            Self::ForwardReverse => "forward-reverse",
            Self::ThreeCategory => "three-category",
        }
    }

    /// Reshapes a prepared corpus into the experiment's training corpus.
    pub fn build_corpus(self, corpus: Corpus, reverse_augmented: bool) -> Result<Corpus, TrainError> {
        let Corpus {
            vocab,
            records,
            num_categories,
        } = corpus;
        let corpus = match self {
            Self::JustJokes => {
                let jokes = records.into_iter().filter(|r| r.category() == CategoryTag(0)).collect();
                Corpus::new(vocab, jokes, 1)?
            }
            Self::ForwardReverse if reverse_augmented => Corpus::new(vocab, records, 2)?,
            Self::ForwardReverse => {
                let fwd: Vec<_> = records.into_iter().filter(|r| r.category() == CategoryTag(0)).collect();
                let mut all = fwd.clone();
                all.extend(fwd.iter().map(|r| {
                    let rev = reverse_record(r);
                    crate::corpus::SentenceRecord::new(CategoryTag(1), rev.tokens().to_vec())
                        .expect("reversal keeps the record frame")
                }));
                Corpus::new(vocab, all, 2)?
            }
            Self::ThreeCategory => Corpus::new(vocab, records, num_categories)?,
        };
        Ok(corpus)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub corpus: Corpus,
    pub model_config: ModelConfig,
    pub outcome: TrainOutcome,
}

/// Loads `data_dir`, builds the experiment corpus, initialises the model
/// (optionally with pretrained vectors) and trains it.
pub fn run_experiment<F>(
    experiment: Experiment,
    data_dir: &Path,
    glove: Option<&Path>,
    cfg: &TrainingConfig,
    mcfg: &ModelConfig,
    on_epoch: F,
) -> Result<ExperimentOutcome, TrainError>
where
    F: FnMut(&EpochReport, &ModelParams, &AdamState) -> Result<(), TrainError>,
{
    let (corpus, manifest) = load_dataset(data_dir)?;
    let reverse_augmented = manifest.get("reverse_augmented").is_some_and(|v| v == "true");
    let corpus = experiment.build_corpus(corpus, reverse_augmented)?;
    let mut mcfg = mcfg.clone();
    mcfg.vocab_size = corpus.vocab.len();
    mcfg.num_categories = corpus.num_categories;
    let mut params = ModelParams::init(&mcfg, cfg.rng_seed)?;
    if let Some(path) = glove {
        let hits = load_pretrained(path, &corpus.vocab, &mut params.glove)?;
        log::info!("pretrained vectors found for {hits} of {} tokens", corpus.vocab.len());
    }
    let outcome = train_from(&corpus, cfg, &mcfg, params, None, on_epoch)?;
    Ok(ExperimentOutcome {
        corpus,
        model_config: mcfg,
        outcome,
    })
}
