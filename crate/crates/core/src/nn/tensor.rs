//! Dense row-major `f64` tensors.
//!
//! Only what the layers need is here: construction, 2-D row access and a
//! handful of matrix products written as plain loops with a fixed
//! summation order, so results are bitwise reproducible.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Panics if `data.len()` does not match the product of `shape`.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += other`, element-wise.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    #[inline]
    pub(crate) fn debug_check_finite(&self) {
        debug_assert!(self.is_finite(), "non-finite value in tensor {:?}", self.shape);
    }
}

/// `x · wᵀ` for `x: [B × in]`, `w: [out × in]`.
pub fn matmul_nt(x: &Tensor, w: &Tensor) -> Tensor {
    let (b, inner) = (x.rows(), x.cols());
    let out = w.rows();
    assert_eq!(w.cols(), inner, "matmul_nt inner dimension mismatch");
    let mut y = Tensor::zeros(&[b, out]);
    for r in 0..b {
        let xr = x.row(r);
        let yr = y.row_mut(r);
        for (o, yo) in yr.iter_mut().enumerate() {
            *yo = dot(xr, w.row(o));
        }
    }
    y
}

/// `acc += dyᵀ · x` for `dy: [B × out]`, `x: [B × in]`, `acc: [out × in]`.
pub fn accumulate_outer(acc: &mut Tensor, dy: &Tensor, x: &Tensor) {
    assert_eq!(dy.rows(), x.rows());
    assert_eq!(acc.rows(), dy.cols());
    assert_eq!(acc.cols(), x.cols());
    for r in 0..dy.rows() {
        let xr = x.row(r);
        for (o, &g) in dy.row(r).iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (a, &xv) in acc.row_mut(o).iter_mut().zip(xr) {
                *a += g * xv;
            }
        }
    }
}

/// `dy · w` for `dy: [B × out]`, `w: [out × in]`.
pub fn matmul_nn(dy: &Tensor, w: &Tensor) -> Tensor {
    assert_eq!(dy.cols(), w.rows(), "matmul_nn inner dimension mismatch");
    let mut dx = Tensor::zeros(&[dy.rows(), w.cols()]);
    for r in 0..dy.rows() {
        let dxr = dx.row_mut(r);
        for (o, &g) in dy.row(r).iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, &wv) in dxr.iter_mut().zip(w.row(o)) {
                *d += g * wv;
            }
        }
    }
    dx
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Concatenate 2-D tensors with equal row counts along the column axis.
pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
    let rows = parts[0].rows();
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Tensor::zeros(&[rows, total]);
    for r in 0..rows {
        let mut off = 0;
        let dst = out.row_mut(r);
        for p in parts {
            assert_eq!(p.rows(), rows, "concat_cols row mismatch");
            let src = p.row(r);
            dst[off..off + src.len()].copy_from_slice(src);
            off += src.len();
        }
    }
    out
}

/// Column slice `[start, end)` of a 2-D tensor.
pub fn slice_cols(t: &Tensor, start: usize, end: usize) -> Tensor {
    let rows = t.rows();
    let mut out = Tensor::zeros(&[rows, end - start]);
    for r in 0..rows {
        out.row_mut(r).copy_from_slice(&t.row(r)[start..end]);
    }
    out
}
