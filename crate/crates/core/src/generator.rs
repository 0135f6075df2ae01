//! Category-controlled decoding with an exploration factor.
//!
//! At each generated position one uniform draw decides between the
//! argmax token (probability `1 − exploration`) and a sample from the
//! softmax distribution (probability `exploration`). With exploration 0 no
//! random numbers are consumed at all.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CategoryTag, Vocabulary, EOS_ID, PAD_ID, SOS_ID};
use crate::model::{argmax, forward_step, ModelConfig, ModelError, ModelParams, ModelState};
use crate::nn::softmax;

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("exploration must be in [0, 1], got {0}")]
    Exploration(f64),
    #[error("max_tokens must be at least 1")]
    MaxTokens,
    #[error("vocabulary is empty or does not match the model ({vocab} tokens, model expects {model})")]
    Vocabulary { vocab: usize, model: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub category: CategoryTag,
    pub exploration: f64,
    /// Seed words; may be empty. Out-of-vocabulary words feed `<unk>`.
    pub seed_text: Vec<String>,
    pub max_tokens: usize,
    pub rng_seed: u64,
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenerateError> {
        if !(0.0..=1.0).contains(&self.exploration) {
            return Err(GenerateError::Exploration(self.exploration));
        }
        if self.max_tokens == 0 {
            return Err(GenerateError::MaxTokens);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplePath {
    Argmax,
    Softmax,
}

pub fn sample_next_token<R: Rng + ?Sized>(logits: &[f64], exploration: f64, rng: &mut R) -> usize {
    sample_next_token_traced(logits, exploration, rng).0
}

/// As [`sample_next_token`], also reporting which rule picked the token.
pub fn sample_next_token_traced<R: Rng + ?Sized>(logits: &[f64], exploration: f64, rng: &mut R) -> (usize, SamplePath) {
    if exploration <= 0.0 || rng.gen::<f64>() >= exploration {
        return (argmax(logits), SamplePath::Argmax);
    }
    let probs = softmax(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return (i, SamplePath::Softmax);
        }
    }
    // Rounding left `acc` slightly below 1.
    (last, SamplePath::Softmax)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub seed: Vec<String>,
    /// Tokens produced by the model, without `<sos>`/`<eos>`.
    pub generated: Vec<String>,
}

impl Generation {
    /// Seed followed by the generated continuation.
    pub fn tokens(&self) -> Vec<String> {
        self.seed.iter().chain(&self.generated).cloned().collect()
    }

    pub fn text(&self) -> String {
        detokenize(&self.tokens())
    }
}

/// Feeds `<sos>` and the seed under the requested category, then decodes
/// until `<eos>` or `max_tokens` generated tokens.
pub fn generate(
    params: &ModelParams,
    mcfg: &ModelConfig,
    vocab: &Vocabulary,
    cfg: &GenerationConfig,
) -> Result<Generation, GenerateError> {
    cfg.validate()?;
    if vocab.is_empty() || vocab.len() != mcfg.vocab_size {
        return Err(GenerateError::Vocabulary {
            vocab: vocab.len(),
            model: mcfg.vocab_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let cats = [cfg.category];
    let mut state = ModelState::zeros(1, mcfg);
    let mut logits = None;
    let feed = std::iter::once(SOS_ID).chain(cfg.seed_text.iter().map(|t| vocab.encode(t)));
    for id in feed {
        let (l, next) = forward_step(params, mcfg, &[id], &cats, &state, false, &mut rng)?;
        logits = Some(l);
        state = next;
    }
    let mut logits = logits.expect("sos is always fed");
    let mut generated = Vec::new();
    loop {
        let mut row = logits.row(0).to_vec();
        row[PAD_ID] = f64::NEG_INFINITY;
        row[SOS_ID] = f64::NEG_INFINITY;
        let id = sample_next_token(&row, cfg.exploration, &mut rng);
        if id == EOS_ID {
            break;
        }
        generated.push(vocab.token(id).unwrap_or(crate::corpus::UNK).to_string());
        if generated.len() >= cfg.max_tokens {
            break;
        }
        let (l, next) = forward_step(params, mcfg, &[id], &cats, &state, false, &mut rng)?;
        logits = l;
        state = next;
    }
    Ok(Generation {
        seed: cfg.seed_text.clone(),
        generated,
    })
}

/// Space-joined tokens.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ")
}

/// Cosmetic variant that attaches closing punctuation to the previous word.
pub fn detokenize_glued<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for t in tokens {
        let t = t.as_ref();
        let glue = matches!(t, "." | "," | "!" | "?" | ";" | ":" | ")" | "%");
        if !out.is_empty() && !glue {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_exploration_is_argmax_without_rng() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let before = rng.clone();
        assert_eq!(sample_next_token(&[1.0, 5.0, 2.0], 0.0, &mut rng), 1);
        assert_eq!(rng, before);
        assert_eq!(sample_next_token(&[3.0, 3.0, 1.0], 0.0, &mut rng), 0);
    }

    #[test]
    fn argmax_invariant_to_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = [0.3, -1.0, 2.5, 2.4];
        let shifted: Vec<f64> = l.iter().map(|v| v + 1234.5).collect();
        assert_eq!(
            sample_next_token(&l, 0.0, &mut rng),
            sample_next_token(&shifted, 0.0, &mut rng)
        );
    }

    #[test]
    fn softmax_path_never_picks_masked_tokens() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = [f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY, 0.0];
        for _ in 0..1000 {
            let id = sample_next_token(&l, 1.0, &mut rng);
            assert!(id == 1 || id == 3);
        }
    }

    #[test]
    fn detokenize_examples() {
        let t = ["i", "had", "to", "use", "a", "new", "word", ".", "plagiarism", "!"];
        assert_eq!(detokenize(&t), "i had to use a new word . plagiarism !");
        assert_eq!(detokenize_glued(&t), "i had to use a new word. plagiarism!");
        assert_eq!(detokenize::<&str>(&[]), "");
        assert_eq!(detokenize(&["hi"]), "hi");
    }

    #[test]
    fn config_validation() {
        let mut c = GenerationConfig {
            category: CategoryTag(0),
            exploration: 1.5,
            seed_text: vec![],
            max_tokens: 5,
            rng_seed: 0,
        };
        assert!(matches!(c.validate(), Err(GenerateError::Exploration(_))));
        c.exploration = 0.0;
        c.max_tokens = 0;
        assert!(matches!(c.validate(), Err(GenerateError::MaxTokens)));
    }
}
