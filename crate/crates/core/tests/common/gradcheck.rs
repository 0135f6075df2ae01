//! Central finite-difference oracle for the full model loss.

use catgen::corpus::{CategoryTag, TrainingExample, PAD_ID};
use catgen::model::{backward_sequence, forward_sequence, TENSOR_NAMES};
use catgen::{ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error. Central differences carry a
/// rounding error of about `f64::EPSILON · loss / EPS` ≈ 3e-11, so relative
/// errors of entries much smaller than this floor are meaningless.
pub const ABS_FLOOR: f64 = 1e-6;

/// vocab 12, GloVe 4, learned embedding 4, dense1 4, LSTM 6 and 4,
/// dense2 4, three steps, two categories.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 12,
        glove_dim: 4,
        input_embed_dim: 4,
        dense1_dim: 4,
        lstm1_dim: 6,
        lstm2_dim: 4,
        dense2_dim: 4,
        dropout: 0.2,
        l2: 1e-5,
        seq_len: 3,
        num_categories: 2,
    }
}

/// Random windows over real tokens with one padded, masked tail.
pub fn random_batch(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<TrainingExample> {
    (0..3)
        .map(|b| {
            let mut input_ids: Vec<usize> = (0..cfg.seq_len).map(|_| rng.gen_range(2..cfg.vocab_size)).collect();
            let mut target_ids: Vec<usize> = (0..cfg.seq_len).map(|_| rng.gen_range(1..cfg.vocab_size)).collect();
            let mut loss_mask = vec![true; cfg.seq_len];
            if b == 2 {
                input_ids[cfg.seq_len - 1] = PAD_ID;
                target_ids[cfg.seq_len - 1] = PAD_ID;
                loss_mask[cfg.seq_len - 1] = false;
            }
            TrainingExample {
                category: CategoryTag(rng.gen_range(0..cfg.num_categories)),
                input_ids,
                target_ids,
                loss_mask,
            }
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel: f64,
    pub failures: Vec<String>,
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < ABS_FLOOR {
        (a - n).abs() / ABS_FLOOR
    } else {
        (a - n).abs() / scale
    }
}

/// Compares BPTT gradients with central differences for every entry of
/// every tensor (GloVe made trainable so it is covered too). Dropout masks
/// are replayed by cloning the RNG before each forward pass.
pub fn check_model(seed: u64) -> GradReport {
    check_model_with(seed, true)
}

/// With frozen GloVe there is no GloVe gradient to compare; every other
/// tensor still is.
pub fn check_model_with(seed: u64, glove_trainable: bool) -> GradReport {
    let cfg = tiny_config();
    let mut params = ModelParams::init(&cfg, seed).unwrap();
    params.glove.trainable = glove_trainable;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let batch = random_batch(&cfg, &mut rng);
    let dropout_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));

    let loss = |p: &ModelParams| {
        forward_sequence(p, &cfg, &batch, true, &mut dropout_rng.clone())
            .unwrap()
            .loss
    };
    let fwd = forward_sequence(&params, &cfg, &batch, true, &mut dropout_rng.clone()).unwrap();
    let grads = backward_sequence(&params, &cfg, &fwd);
    let mut analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data().to_vec()).collect();
    if !glove_trainable {
        // Frozen GloVe carries no gradient tensor at all.
        assert_eq!(analytic.len(), TENSOR_NAMES.len() - 1);
        analytic.insert(0, Vec::new());
    }
    assert_eq!(analytic.len(), TENSOR_NAMES.len());

    let mut report = GradReport::default();
    for (k, name) in TENSOR_NAMES.iter().enumerate() {
        if *name == "glove" && !glove_trainable {
            continue;
        }
        for (e, &a) in analytic[k].iter().enumerate() {
            let orig = params.tensors()[k].data()[e];
            params.tensors_mut()[k].data_mut()[e] = orig + EPS;
            let up = loss(&params);
            params.tensors_mut()[k].data_mut()[e] = orig - EPS;
            let down = loss(&params);
            params.tensors_mut()[k].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let err = rel_err(a, numeric);
            report.checked += 1;
            report.max_rel = report.max_rel.max(err);
            if err > REL_TOL {
                report
                    .failures
                    .push(format!("{name}[{e}]: analytic {a:e}, numeric {numeric:e}"));
            }
        }
    }
    report
}
