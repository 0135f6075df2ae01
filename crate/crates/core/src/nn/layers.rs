//! Differentiable layers with hand-derived gradients.

use rand::Rng;

use super::tensor::{accumulate_outer, matmul_nn, matmul_nt, Tensor};
use super::NnError;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Affine
// ---------------------------------------------------------------------------

/// `y = x·Wᵀ + b` with `W: [out × in]`, `b: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl AffineParams {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Tensor::zeros(&[output, input]),
            b: Tensor::zeros(&[output]),
        }
    }

    /// Weights uniform in `±1/√in`, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            w: Tensor::uniform(&[output, input], bound, rng),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim())
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }
}

pub fn affine_forward(p: &AffineParams, x: &Tensor) -> Tensor {
    let mut y = matmul_nt(x, &p.w);
    let b = p.b.data();
    for r in 0..y.rows() {
        for (v, bv) in y.row_mut(r).iter_mut().zip(b) {
            *v += bv;
        }
    }
    y
}

/// Accumulates parameter gradients into `grads` and returns `∂L/∂x`.
pub fn affine_backward(p: &AffineParams, x: &Tensor, dy: &Tensor, grads: &mut AffineParams) -> Tensor {
    accumulate_outer(&mut grads.w, dy, x);
    let gb = grads.b.data_mut();
    for r in 0..dy.rows() {
        for (g, d) in gb.iter_mut().zip(dy.row(r)) {
            *g += d;
        }
    }
    matmul_nn(dy, &p.w)
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub table: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }
}

pub fn embedding_forward(e: &EmbeddingTable, ids: &[usize]) -> Tensor {
    let dim = e.dim();
    let mut out = Tensor::zeros(&[ids.len(), dim]);
    for (r, &id) in ids.iter().enumerate() {
        out.row_mut(r).copy_from_slice(e.table.row(id));
    }
    out
}

/// Scatter-add `dy` rows into the rows of `grad` selected by `ids`.
pub fn embedding_backward(ids: &[usize], dy: &Tensor, grad: &mut Tensor) {
    for (r, &id) in ids.iter().enumerate() {
        for (g, d) in grad.row_mut(id).iter_mut().zip(dy.row(r)) {
            *g += d;
        }
    }
}

// ---------------------------------------------------------------------------
// LSTM cell
// ---------------------------------------------------------------------------

/// Gate blocks are laid out as (input, forget, candidate, output) along the
/// `4H` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b: Tensor,
}

impl LstmCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[4 * hidden, input]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    /// Uniform `±1/√H` weights; forget-gate bias slice set to 1.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut p = Self {
            w_ih: Tensor::uniform(&[4 * hidden, input], bound, rng),
            w_hh: Tensor::uniform(&[4 * hidden, hidden], bound, rng),
            b: Tensor::zeros(&[4 * hidden]),
        };
        p.b.data_mut()[hidden..2 * hidden].fill(1.0);
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim())
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.cols()
    }
}

/// Activations kept for the backward pass of one step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub x: Tensor,
    pub h_prev: Tensor,
    pub c_prev: Tensor,
    /// Post-activation gates `[B × 4H]` in (i, f, g, o) order.
    pub gates: Tensor,
    pub tanh_c: Tensor,
}

pub fn lstm_step(p: &LstmCellParams, x: &Tensor, h_prev: &Tensor, c_prev: &Tensor) -> (Tensor, Tensor, LstmCache) {
    let hd = p.hidden_dim();
    let batch = x.rows();
    let mut z = matmul_nt(x, &p.w_ih);
    let zh = matmul_nt(h_prev, &p.w_hh);
    let bias = p.b.data();
    let mut h = Tensor::zeros(&[batch, hd]);
    let mut c = Tensor::zeros(&[batch, hd]);
    let mut tanh_c = Tensor::zeros(&[batch, hd]);
    for r in 0..batch {
        let zr = z.row_mut(r);
        for ((v, a), bv) in zr.iter_mut().zip(zh.row(r)).zip(bias) {
            *v += a + bv;
        }
        for k in 0..hd {
            zr[k] = sigmoid(zr[k]);
            zr[hd + k] = sigmoid(zr[hd + k]);
            zr[2 * hd + k] = zr[2 * hd + k].tanh();
            zr[3 * hd + k] = sigmoid(zr[3 * hd + k]);
        }
        let cp = c_prev.row(r);
        let cr = c.row_mut(r);
        for k in 0..hd {
            cr[k] = zr[hd + k] * cp[k] + zr[k] * zr[2 * hd + k];
        }
        let tr = tanh_c.row_mut(r);
        for k in 0..hd {
            tr[k] = cr[k].tanh();
        }
        let hr = h.row_mut(r);
        for k in 0..hd {
            hr[k] = zr[3 * hd + k] * tr[k];
        }
    }
    let cache = LstmCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        gates: z,
        tanh_c,
    };
    (h, c, cache)
}

/// Gradients flowing out of one step: input, previous hidden, previous cell.
#[derive(Debug, Clone)]
pub struct LstmStepGrads {
    pub dx: Tensor,
    pub dh_prev: Tensor,
    pub dc_prev: Tensor,
}

/// Backward through one step given `∂L/∂h` and `∂L/∂c` at its outputs.
pub fn lstm_backward(
    p: &LstmCellParams,
    cache: &LstmCache,
    dh: &Tensor,
    dc: &Tensor,
    grads: &mut LstmCellParams,
) -> LstmStepGrads {
    let hd = p.hidden_dim();
    let batch = dh.rows();
    let mut dz = Tensor::zeros(&[batch, 4 * hd]);
    let mut dc_prev = Tensor::zeros(&[batch, hd]);
    for r in 0..batch {
        let g = cache.gates.row(r);
        let tc = cache.tanh_c.row(r);
        let cp = cache.c_prev.row(r);
        let dhr = dh.row(r);
        let dcr = dc.row(r);
        let dzr = dz.row_mut(r);
        let mut dcp = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, cand, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let d_o = dhr[k] * tc[k];
            let dct = dcr[k] + dhr[k] * o * (1.0 - tc[k] * tc[k]);
            dzr[k] = dct * cand * i * (1.0 - i);
            dzr[hd + k] = dct * cp[k] * f * (1.0 - f);
            dzr[2 * hd + k] = dct * i * (1.0 - cand * cand);
            dzr[3 * hd + k] = d_o * o * (1.0 - o);
            dcp[k] = dct * f;
        }
        dc_prev.row_mut(r).copy_from_slice(&dcp);
    }
    accumulate_outer(&mut grads.w_ih, &dz, &cache.x);
    accumulate_outer(&mut grads.w_hh, &dz, &cache.h_prev);
    let gb = grads.b.data_mut();
    for r in 0..batch {
        for (gv, d) in gb.iter_mut().zip(dz.row(r)) {
            *gv += d;
        }
    }
    LstmStepGrads {
        dx: matmul_nn(&dz, &p.w_ih),
        dh_prev: matmul_nn(&dz, &p.w_hh),
        dc_prev,
    }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout. The returned mask holds the per-entry multiplier
/// (`0` or `1/(1-rate)`), so the backward pass is `dx = dy ⊙ mask`.
pub fn dropout_forward<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor, Tensor), NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::DropoutRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), Tensor::filled(x.shape(), 1.0)));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask_data: Vec<f64> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mask = Tensor::from_vec(x.shape(), mask_data);
    let y_data = x.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
    Ok((Tensor::from_vec(x.shape(), y_data), mask))
}

pub fn dropout_backward(dy: &Tensor, mask: &Tensor) -> Tensor {
    let data = dy.data().iter().zip(mask.data()).map(|(d, m)| d * m).collect();
    Tensor::from_vec(dy.shape(), data)
}

// ---------------------------------------------------------------------------
// Softmax / cross-entropy
// ---------------------------------------------------------------------------

/// Max-subtracted softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Per-row negative log-likelihoods of unmasked rows plus the gradient
/// `(softmax − onehot) · scale` (zero on masked rows).
pub(crate) fn softmax_xent_rows(logits: &Tensor, targets: &[usize], mask: &[bool], scale: f64) -> (Vec<f64>, Tensor) {
    let v = logits.cols();
    let mut grad = Tensor::zeros(logits.shape());
    let mut nll = Vec::new();
    for r in 0..logits.rows() {
        if !mask[r] {
            continue;
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let log_z = max + sum.ln();
        let t = targets[r];
        assert!(t < v, "target id {t} out of range for {v} classes");
        nll.push(log_z - row[t]);
        let gr = grad.row_mut(r);
        for (k, g) in gr.iter_mut().enumerate() {
            *g = (row[k] - log_z).exp() * scale;
        }
        gr[t] -= scale;
    }
    (nll, grad)
}

/// Sum that does not depend on the order of its inputs.
pub(crate) fn order_free_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    /// Mean loss over unmasked rows; 0 if every row is masked.
    pub loss: f64,
    pub grad: Tensor,
    pub count: usize,
}

pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize], mask: &[bool]) -> CrossEntropy {
    assert_eq!(logits.rows(), targets.len());
    assert_eq!(logits.rows(), mask.len());
    let count = mask.iter().filter(|m| **m).count();
    let scale = if count == 0 { 0.0 } else { 1.0 / count as f64 };
    let (nll, grad) = softmax_xent_rows(logits, targets, mask, scale);
    let loss = if count == 0 {
        0.0
    } else {
        order_free_sum(nll) / count as f64
    };
    CrossEntropy { loss, grad, count }
}

// ---------------------------------------------------------------------------
// L2
// ---------------------------------------------------------------------------

/// `factor · Σ w²` over the given weights and the matching gradients `2·factor·w`.
pub fn l2_penalty(weights: &[&Tensor], factor: f64) -> (f64, Vec<Tensor>) {
    assert!(factor >= 0.0, "l2 factor must be non-negative");
    let penalty = factor * weights.iter().map(|w| w.sum_squares()).sum::<f64>();
    let grads = weights
        .iter()
        .map(|w| {
            let mut g = (*w).clone();
            g.scale(2.0 * factor);
            g
        })
        .collect();
    (penalty, grads)
}
