use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(shapes: &[&[usize]]) -> Self {
        Self {
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }
}

/// One bias-corrected Adam step over every `(param, grad)` pair.
pub fn adam_update(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len(), "adam state does not match parameter list");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(p.shape(), g.shape());
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (((w, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale(s));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]);
        let before = w.clone();
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new(&[&[3]]);
        for _ in 0..10 {
            adam_update(&mut [&mut w], &[&g], &mut st, &AdamConfig::default());
        }
        assert_eq!(w, before);
    }

    #[test]
    fn first_step_by_hand() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε).
        let cfg = AdamConfig::default();
        let g = 0.25;
        let mut w = Tensor::from_vec(&[1], vec![1.0]);
        let mut st = AdamState::new(&[&[1]]);
        adam_update(&mut [&mut w], &[&Tensor::from_vec(&[1], vec![g])], &mut st, &cfg);
        let m = (1.0 - 0.9) * g;
        let v = (1.0 - 0.999) * g * g;
        let expect = 1.0 - 1e-3 * (m / 0.1) / ((v / (1.0 - 0.999_f64)).sqrt() + 1e-8);
        assert_eq!(w.data()[0], expect);
        assert!((w.data()[0] - (1.0 - 1e-3 * g / (g + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratic() {
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut w = Tensor::from_vec(&[1], vec![5.0]);
        let mut st = AdamState::new(&[&[1]]);
        for _ in 0..2000 {
            let g = Tensor::from_vec(&[1], vec![2.0 * w.data()[0]]);
            adam_update(&mut [&mut w], &[&g], &mut st, &cfg);
        }
        assert!(w.data()[0].abs() < 1e-3, "w = {}", w.data()[0]);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut a = Tensor::from_vec(&[2], vec![3.0, 0.0]);
        let mut b = Tensor::from_vec(&[1], vec![4.0]);
        let n = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(n, 5.0);
        let after = (a.sum_squares() + b.sum_squares()).sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }
}
