//! The category-conditioned stacked LSTM.
//!
//! Per time step:
//!
//! ```text
//! x  = [glove(tok) | learned(tok) | onehot(category)]
//! a1 = tanh(dense1(x))          -> dropout
//! h1 = lstm1(a1)                -> dropout
//! h2 = lstm2(h1)                -> dropout
//! a2 = tanh(dense2(h2))
//! logits = out_proj(a2)
//! ```
//!
//! The category one-hot is fed at every step. The GloVe table is frozen
//! unless its `trainable` flag is set.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CategoryTag, TrainingExample};
use crate::nn::layers::{order_free_sum, softmax_xent_rows};
use crate::nn::tensor::{concat_cols, slice_cols};
use crate::nn::{
    affine_backward, affine_forward, dropout_backward, dropout_forward, embedding_backward, embedding_forward,
    lstm_backward, lstm_step, AffineParams, EmbeddingTable, LstmCache, LstmCellParams, NnError, Tensor,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("category {category} out of range for {num_categories} categories")]
    CategoryOutOfRange { category: usize, num_categories: usize },
    #[error("batch shape: {0}")]
    BatchShape(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub glove_dim: usize,
    pub input_embed_dim: usize,
    pub dense1_dim: usize,
    pub lstm1_dim: usize,
    pub lstm2_dim: usize,
    pub dense2_dim: usize,
    pub dropout: f64,
    pub l2: f64,
    pub seq_len: usize,
    pub num_categories: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 12614,
            glove_dim: 200,
            input_embed_dim: 512,
            dense1_dim: 512,
            lstm1_dim: 1024,
            lstm2_dim: 512,
            dense2_dim: 512,
            dropout: 0.2,
            l2: 1e-5,
            seq_len: 13,
            num_categories: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("glove_dim", self.glove_dim),
            ("input_embed_dim", self.input_embed_dim),
            ("dense1_dim", self.dense1_dim),
            ("lstm1_dim", self.lstm1_dim),
            ("lstm2_dim", self.lstm2_dim),
            ("dense2_dim", self.dense2_dim),
            ("seq_len", self.seq_len),
            ("num_categories", self.num_categories),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(ModelError::Config(format!("l2 must be non-negative, got {}", self.l2)));
        }
        Ok(())
    }

    pub fn dense1_input_dim(&self) -> usize {
        self.glove_dim + self.input_embed_dim + self.num_categories
    }

    /// Canonical `key=value` form, used by config files and checkpoints.
    pub fn to_key_values(&self) -> BTreeMap<String, String> {
        [
            ("vocab_size", self.vocab_size.to_string()),
            ("glove_dim", self.glove_dim.to_string()),
            ("input_embed_dim", self.input_embed_dim.to_string()),
            ("dense1_dim", self.dense1_dim.to_string()),
            ("lstm1_dim", self.lstm1_dim.to_string()),
            ("lstm2_dim", self.lstm2_dim.to_string()),
            ("dense2_dim", self.dense2_dim.to_string()),
            ("dropout", self.dropout.to_string()),
            ("l2", self.l2.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("num_categories", self.num_categories.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Applies recognised keys; returns the keys it did not recognise.
    pub fn apply_key_values<'a>(&mut self, kv: &'a BTreeMap<String, String>) -> Result<Vec<&'a str>, ModelError> {
        let mut unknown = Vec::new();
        for (k, v) in kv {
            let bad = || ModelError::Config(format!("invalid value {v:?} for {k}"));
            match k.as_str() {
                "vocab_size" => self.vocab_size = v.parse().map_err(|_| bad())?,
                "glove_dim" => self.glove_dim = v.parse().map_err(|_| bad())?,
                "input_embed_dim" => self.input_embed_dim = v.parse().map_err(|_| bad())?,
                "dense1_dim" => self.dense1_dim = v.parse().map_err(|_| bad())?,
                "lstm1_dim" => self.lstm1_dim = v.parse().map_err(|_| bad())?,
                "lstm2_dim" => self.lstm2_dim = v.parse().map_err(|_| bad())?,
                "dense2_dim" => self.dense2_dim = v.parse().map_err(|_| bad())?,
                "dropout" => self.dropout = v.parse().map_err(|_| bad())?,
                "l2" => self.l2 = v.parse().map_err(|_| bad())?,
                "seq_len" => self.seq_len = v.parse().map_err(|_| bad())?,
                "num_categories" => self.num_categories = v.parse().map_err(|_| bad())?,
                _ => unknown.push(k.as_str()),
            }
        }
        Ok(unknown)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub glove: EmbeddingTable,
    pub learned_embed: EmbeddingTable,
    pub dense1: AffineParams,
    pub lstm1: LstmCellParams,
    pub lstm2: LstmCellParams,
    pub dense2: AffineParams,
    pub out_proj: AffineParams,
}

pub const TENSOR_NAMES: [&str; 14] = [
    "glove",
    "learned_embed",
    "dense1.w",
    "dense1.b",
    "lstm1.w_ih",
    "lstm1.w_hh",
    "lstm1.b",
    "lstm2.w_ih",
    "lstm2.w_hh",
    "lstm2.b",
    "dense2.w",
    "dense2.b",
    "out_proj.w",
    "out_proj.b",
];

impl ModelParams {
    /// Seeded initialisation. The GloVe table gets random rows here; use
    /// [`crate::embeddings::load_pretrained`] to overwrite known tokens.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::init_with(cfg, &mut rng))
    }

    pub fn init_with<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let glove = EmbeddingTable {
            table: Tensor::uniform(
                &[cfg.vocab_size, cfg.glove_dim],
                1.0 / (cfg.glove_dim as f64).sqrt(),
                rng,
            ),
            trainable: false,
        };
        let learned_embed = EmbeddingTable {
            table: Tensor::uniform(
                &[cfg.vocab_size, cfg.input_embed_dim],
                1.0 / (cfg.input_embed_dim as f64).sqrt(),
                rng,
            ),
            trainable: true,
        };
        Self {
            glove,
            learned_embed,
            dense1: AffineParams::init(cfg.dense1_input_dim(), cfg.dense1_dim, rng),
            lstm1: LstmCellParams::init(cfg.dense1_dim, cfg.lstm1_dim, rng),
            lstm2: LstmCellParams::init(cfg.lstm1_dim, cfg.lstm2_dim, rng),
            dense2: AffineParams::init(cfg.lstm2_dim, cfg.dense2_dim, rng),
            out_proj: AffineParams::init(cfg.dense2_dim, cfg.vocab_size, rng),
        }
    }

    /// All-zero parameters with the shapes `cfg` implies.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            glove: EmbeddingTable {
                table: Tensor::zeros(&[cfg.vocab_size, cfg.glove_dim]),
                trainable: false,
            },
            learned_embed: EmbeddingTable {
                table: Tensor::zeros(&[cfg.vocab_size, cfg.input_embed_dim]),
                trainable: true,
            },
            dense1: AffineParams::zeros(cfg.dense1_input_dim(), cfg.dense1_dim),
            lstm1: LstmCellParams::zeros(cfg.dense1_dim, cfg.lstm1_dim),
            lstm2: LstmCellParams::zeros(cfg.lstm1_dim, cfg.lstm2_dim),
            dense2: AffineParams::zeros(cfg.lstm2_dim, cfg.dense2_dim),
            out_proj: AffineParams::zeros(cfg.dense2_dim, cfg.vocab_size),
        }
    }

    /// All tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.glove.table,
            &self.learned_embed.table,
            &self.dense1.w,
            &self.dense1.b,
            &self.lstm1.w_ih,
            &self.lstm1.w_hh,
            &self.lstm1.b,
            &self.lstm2.w_ih,
            &self.lstm2.w_hh,
            &self.lstm2.b,
            &self.dense2.w,
            &self.dense2.b,
            &self.out_proj.w,
            &self.out_proj.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.glove.table,
            &mut self.learned_embed.table,
            &mut self.dense1.w,
            &mut self.dense1.b,
            &mut self.lstm1.w_ih,
            &mut self.lstm1.w_hh,
            &mut self.lstm1.b,
            &mut self.lstm2.w_ih,
            &mut self.lstm2.w_hh,
            &mut self.lstm2.b,
            &mut self.dense2.w,
            &mut self.dense2.b,
            &mut self.out_proj.w,
            &mut self.out_proj.b,
        ]
    }

    /// Tensors the optimizer updates, in [`TENSOR_NAMES`] order (GloVe only
    /// when trainable).
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let glove_trainable = self.glove.trainable;
        let mut all = self.tensors_mut();
        if !glove_trainable {
            all.remove(0);
        }
        all
    }

    pub fn trainable_shapes(&self) -> Vec<Vec<usize>> {
        let skip = usize::from(!self.glove.trainable);
        self.tensors()
            .into_iter()
            .skip(skip)
            .map(|t| t.shape().to_vec())
            .collect()
    }

    /// Weight matrices subject to L2: every trainable non-bias tensor.
    fn l2_weights(&self) -> Vec<&Tensor> {
        let mut w = Vec::with_capacity(8);
        if self.glove.trainable {
            w.push(&self.glove.table);
        }
        w.extend([
            &self.learned_embed.table,
            &self.dense1.w,
            &self.lstm1.w_ih,
            &self.lstm1.w_hh,
            &self.lstm2.w_ih,
            &self.lstm2.w_hh,
            &self.dense2.w,
            &self.out_proj.w,
        ]);
        w
    }

    pub fn l2_penalty(&self, factor: f64) -> f64 {
        if factor == 0.0 {
            return 0.0;
        }
        factor * self.l2_weights().iter().map(|w| w.sum_squares()).sum::<f64>()
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let expect: [(&str, &Tensor, Vec<usize>); 7] = [
            ("glove", &self.glove.table, vec![cfg.vocab_size, cfg.glove_dim]),
            (
                "learned_embed",
                &self.learned_embed.table,
                vec![cfg.vocab_size, cfg.input_embed_dim],
            ),
            ("dense1.w", &self.dense1.w, vec![cfg.dense1_dim, cfg.dense1_input_dim()]),
            ("lstm1.w_ih", &self.lstm1.w_ih, vec![4 * cfg.lstm1_dim, cfg.dense1_dim]),
            ("lstm2.w_ih", &self.lstm2.w_ih, vec![4 * cfg.lstm2_dim, cfg.lstm1_dim]),
            ("dense2.w", &self.dense2.w, vec![cfg.dense2_dim, cfg.lstm2_dim]),
            ("out_proj.w", &self.out_proj.w, vec![cfg.vocab_size, cfg.dense2_dim]),
        ];
        for (name, t, shape) in expect {
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Config(format!(
                    "{name} has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Gradients for every trainable tensor; `glove` is `None` when frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub glove: Option<Tensor>,
    pub learned_embed: Tensor,
    pub dense1: AffineParams,
    pub lstm1: LstmCellParams,
    pub lstm2: LstmCellParams,
    pub dense2: AffineParams,
    pub out_proj: AffineParams,
}

impl ModelGrads {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            glove: p.glove.trainable.then(|| Tensor::zeros(p.glove.table.shape())),
            learned_embed: Tensor::zeros(p.learned_embed.table.shape()),
            dense1: p.dense1.zeros_like(),
            lstm1: p.lstm1.zeros_like(),
            lstm2: p.lstm2.zeros_like(),
            dense2: p.dense2.zeros_like(),
            out_proj: p.out_proj.zeros_like(),
        }
    }

    /// Same order as [`ModelParams::trainable_mut`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.glove.iter().collect();
        v.extend([
            &self.learned_embed,
            &self.dense1.w,
            &self.dense1.b,
            &self.lstm1.w_ih,
            &self.lstm1.w_hh,
            &self.lstm1.b,
            &self.lstm2.w_ih,
            &self.lstm2.w_hh,
            &self.lstm2.b,
            &self.dense2.w,
            &self.dense2.b,
            &self.out_proj.w,
            &self.out_proj.b,
        ]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.glove.iter_mut().collect();
        v.extend([
            &mut self.learned_embed,
            &mut self.dense1.w,
            &mut self.dense1.b,
            &mut self.lstm1.w_ih,
            &mut self.lstm1.w_hh,
            &mut self.lstm1.b,
            &mut self.lstm2.w_ih,
            &mut self.lstm2.w_hh,
            &mut self.lstm2.b,
            &mut self.dense2.w,
            &mut self.dense2.b,
            &mut self.out_proj.w,
            &mut self.out_proj.b,
        ]);
        v
    }

    fn add_l2(&mut self, p: &ModelParams, factor: f64) {
        if factor == 0.0 {
            return;
        }
        let add = |g: &mut Tensor, w: &Tensor| {
            for (gv, wv) in g.data_mut().iter_mut().zip(w.data()) {
                *gv += 2.0 * factor * wv;
            }
        };
        if let Some(g) = self.glove.as_mut() {
            add(g, &p.glove.table);
        }
        add(&mut self.learned_embed, &p.learned_embed.table);
        add(&mut self.dense1.w, &p.dense1.w);
        add(&mut self.lstm1.w_ih, &p.lstm1.w_ih);
        add(&mut self.lstm1.w_hh, &p.lstm1.w_hh);
        add(&mut self.lstm2.w_ih, &p.lstm2.w_ih);
        add(&mut self.lstm2.w_hh, &p.lstm2.w_hh);
        add(&mut self.dense2.w, &p.dense2.w);
        add(&mut self.out_proj.w, &p.out_proj.w);
    }
}

/// Recurrent state of both LSTM layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub h1: Tensor,
    pub c1: Tensor,
    pub h2: Tensor,
    pub c2: Tensor,
}

impl ModelState {
    pub fn zeros(batch: usize, cfg: &ModelConfig) -> Self {
        Self {
            h1: Tensor::zeros(&[batch, cfg.lstm1_dim]),
            c1: Tensor::zeros(&[batch, cfg.lstm1_dim]),
            h2: Tensor::zeros(&[batch, cfg.lstm2_dim]),
            c2: Tensor::zeros(&[batch, cfg.lstm2_dim]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepCache {
    ids: Vec<usize>,
    x: Tensor,
    a1: Tensor,
    mask1: Tensor,
    lstm1: LstmCache,
    mask2: Tensor,
    lstm2: LstmCache,
    mask3: Tensor,
    d3: Tensor,
    a2: Tensor,
}

fn check_ids(cfg: &ModelConfig, ids: &[usize], cats: &[CategoryTag]) -> Result<(), ModelError> {
    if ids.len() != cats.len() {
        return Err(ModelError::BatchShape(format!(
            "{} token ids but {} categories",
            ids.len(),
            cats.len()
        )));
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(ModelError::TokenOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    if let Some(c) = cats.iter().find(|c| c.0 >= cfg.num_categories) {
        return Err(ModelError::CategoryOutOfRange {
            category: c.0,
            num_categories: cfg.num_categories,
        });
    }
    Ok(())
}

fn tanh_inplace(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.tanh());
}

fn step_inner<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &ModelConfig,
    ids: &[usize],
    cats: &[CategoryTag],
    state: &ModelState,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, ModelState, StepCache), ModelError> {
    let batch = ids.len();
    let g = embedding_forward(&params.glove, ids);
    let e = embedding_forward(&params.learned_embed, ids);
    let mut onehot = Tensor::zeros(&[batch, cfg.num_categories]);
    for (r, c) in cats.iter().enumerate() {
        onehot.row_mut(r)[c.0] = 1.0;
    }
    let x = concat_cols(&[&g, &e, &onehot]);

    let mut a1 = affine_forward(&params.dense1, &x);
    tanh_inplace(&mut a1);
    let (d1, mask1) = dropout_forward(&a1, cfg.dropout, rng, training)?;
    let (h1, c1, lstm1) = lstm_step(&params.lstm1, &d1, &state.h1, &state.c1);
    let (d2, mask2) = dropout_forward(&h1, cfg.dropout, rng, training)?;
    let (h2, c2, lstm2) = lstm_step(&params.lstm2, &d2, &state.h2, &state.c2);
    let (d3, mask3) = dropout_forward(&h2, cfg.dropout, rng, training)?;
    let mut a2 = affine_forward(&params.dense2, &d3);
    tanh_inplace(&mut a2);
    let logits = affine_forward(&params.out_proj, &a2);
    logits.debug_check_finite();

    let cache = StepCache {
        ids: ids.to_vec(),
        x,
        a1,
        mask1,
        lstm1,
        mask2,
        lstm2,
        mask3,
        d3,
        a2,
    };
    Ok((logits, ModelState { h1, c1, h2, c2 }, cache))
}

/// One time step for a batch of tokens; returns logits `[B × vocab]` and the
/// advanced state.
pub fn forward_step<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &ModelConfig,
    token_ids: &[usize],
    categories: &[CategoryTag],
    state: &ModelState,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, ModelState), ModelError> {
    check_ids(cfg, token_ids, categories)?;
    let (logits, next, _) = step_inner(params, cfg, token_ids, categories, state, training, rng)?;
    Ok((logits, next))
}

/// Everything the backward pass needs, plus summary statistics.
#[derive(Debug, Clone)]
pub struct SequenceForward {
    /// Cross-entropy plus L2 penalty.
    pub loss: f64,
    pub cross_entropy: f64,
    pub l2: f64,
    /// Unmasked target positions.
    pub count: usize,
    /// Unmasked positions whose argmax matches the target.
    pub correct: usize,
    pub logits: Vec<Tensor>,
    caches: Vec<StepCache>,
    dlogits: Vec<Tensor>,
}

impl SequenceForward {
    pub fn steps(&self) -> usize {
        self.caches.len()
    }
}

/// Lowest index among maximal entries.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Unrolls the model over a batch of equal-length windows starting from a
/// zero state. The loss is the mean cross-entropy over every unmasked
/// position of the batch plus the L2 penalty.
pub fn forward_sequence<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[TrainingExample],
    training: bool,
    rng: &mut R,
) -> Result<SequenceForward, ModelError> {
    let b = batch.len();
    if b == 0 {
        return Err(ModelError::BatchShape("empty batch".into()));
    }
    let steps = batch[0].len();
    for ex in batch {
        if ex.input_ids.len() != steps || ex.target_ids.len() != steps || ex.loss_mask.len() != steps {
            return Err(ModelError::BatchShape("examples of unequal length".into()));
        }
        if let Some(&id) = ex.target_ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
    }
    let cats: Vec<CategoryTag> = batch.iter().map(|ex| ex.category).collect();
    let count: usize = batch.iter().map(|ex| ex.loss_mask.iter().filter(|m| **m).count()).sum();
    let scale = if count == 0 { 0.0 } else { 1.0 / count as f64 };

    let mut state = ModelState::zeros(b, cfg);
    let mut logits_all = Vec::with_capacity(steps);
    let mut caches = Vec::with_capacity(steps);
    let mut dlogits = Vec::with_capacity(steps);
    let mut nll = Vec::with_capacity(count);
    let mut correct = 0;
    for t in 0..steps {
        let ids: Vec<usize> = batch.iter().map(|ex| ex.input_ids[t]).collect();
        check_ids(cfg, &ids, &cats)?;
        let (logits, next, cache) = step_inner(params, cfg, &ids, &cats, &state, training, rng)?;
        let targets: Vec<usize> = batch.iter().map(|ex| ex.target_ids[t]).collect();
        let mask: Vec<bool> = batch.iter().map(|ex| ex.loss_mask[t]).collect();
        let (step_nll, grad) = softmax_xent_rows(&logits, &targets, &mask, scale);
        nll.extend(step_nll);
        for r in 0..b {
            if mask[r] && argmax(logits.row(r)) == targets[r] {
                correct += 1;
            }
        }
        logits_all.push(logits);
        caches.push(cache);
        dlogits.push(grad);
        state = next;
    }
    let cross_entropy = if count == 0 {
        0.0
    } else {
        order_free_sum(nll) / count as f64
    };
    let l2 = params.l2_penalty(cfg.l2);
    Ok(SequenceForward {
        loss: cross_entropy + l2,
        cross_entropy,
        l2,
        count,
        correct,
        logits: logits_all,
        caches,
        dlogits,
    })
}

fn tanh_backward(dy: &Tensor, y: &Tensor) -> Tensor {
    let data = dy.data().iter().zip(y.data()).map(|(d, v)| d * (1.0 - v * v)).collect();
    Tensor::from_vec(dy.shape(), data)
}

/// Backpropagation through time for a matching [`forward_sequence`] call.
pub fn backward_sequence(params: &ModelParams, cfg: &ModelConfig, fwd: &SequenceForward) -> ModelGrads {
    backward_sequence_scaled(params, cfg, fwd, 1.0)
}

/// As [`backward_sequence`] for the loss multiplied by `loss_scale`.
pub fn backward_sequence_scaled(
    params: &ModelParams,
    cfg: &ModelConfig,
    fwd: &SequenceForward,
    loss_scale: f64,
) -> ModelGrads {
    let mut grads = ModelGrads::zeros_like(params);
    let Some(first) = fwd.caches.first() else {
        return grads;
    };
    let b = first.ids.len();
    let mut dh1 = Tensor::zeros(&[b, cfg.lstm1_dim]);
    let mut dc1 = Tensor::zeros(&[b, cfg.lstm1_dim]);
    let mut dh2 = Tensor::zeros(&[b, cfg.lstm2_dim]);
    let mut dc2 = Tensor::zeros(&[b, cfg.lstm2_dim]);
    let glove_end = cfg.glove_dim;
    let learned_end = glove_end + cfg.input_embed_dim;

    for (cache, dlogits) in fwd.caches.iter().zip(&fwd.dlogits).rev() {
        let mut dl = dlogits.clone();
        if loss_scale != 1.0 {
            dl.scale(loss_scale);
        }
        let da2 = affine_backward(&params.out_proj, &cache.a2, &dl, &mut grads.out_proj);
        let dz2 = tanh_backward(&da2, &cache.a2);
        let dd3 = affine_backward(&params.dense2, &cache.d3, &dz2, &mut grads.dense2);
        let mut dh2_total = dropout_backward(&dd3, &cache.mask3);
        dh2_total.add_assign(&dh2);
        let s2 = lstm_backward(&params.lstm2, &cache.lstm2, &dh2_total, &dc2, &mut grads.lstm2);
        dh2 = s2.dh_prev;
        dc2 = s2.dc_prev;

        let mut dh1_total = dropout_backward(&s2.dx, &cache.mask2);
        dh1_total.add_assign(&dh1);
        let s1 = lstm_backward(&params.lstm1, &cache.lstm1, &dh1_total, &dc1, &mut grads.lstm1);
        dh1 = s1.dh_prev;
        dc1 = s1.dc_prev;

        let da1 = dropout_backward(&s1.dx, &cache.mask1);
        let dz1 = tanh_backward(&da1, &cache.a1);
        let dx = affine_backward(&params.dense1, &cache.x, &dz1, &mut grads.dense1);
        if let Some(gg) = grads.glove.as_mut() {
            embedding_backward(&cache.ids, &slice_cols(&dx, 0, glove_end), gg);
        }
        embedding_backward(
            &cache.ids,
            &slice_cols(&dx, glove_end, learned_end),
            &mut grads.learned_embed,
        );
    }
    grads.add_l2(params, cfg.l2 * loss_scale);
    grads
}
