//! Novelty metrics for generated text and export for external parsing.
//!
//! # Phrase overlap
//!
//! The score sums `len²` over shared contiguous phrases found greedily:
//! the longest phrase common to both (remaining) sequences is removed from
//! both and scored, and the process repeats until no token is shared.
//! Removed positions act as barriers; no later phrase may span them.
//!
//! When several distinct occurrences share the maximal length, the choice
//! can change what remains available later. We take the choice that gives
//! the highest final score. This makes the measure symmetric, which a fixed
//! positional tie-break (e.g. leftmost in the first sequence) does not:
//! for `[a a b a]` vs `[b a a a]` leftmost-first scores 6 one way and 8
//! the other. Once the longest remaining phrase has length 1 every
//! matching order scores the same (the multiset intersection size), so the
//! search only branches on phrases of length ≥ 2.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;
use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CategoryTag, Corpus};
use crate::generator::{generate, GenerateError, GenerationConfig};
use crate::model::{ModelConfig, ModelParams};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("phrase similarity of two empty sequences is undefined")]
    BothEmpty,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn intern<'a, T: Eq + Hash>(s1: &'a [T], s2: &'a [T]) -> (Vec<u32>, Vec<u32>, usize) {
    let mut ids: HashMap<&'a T, u32> = HashMap::new();
    let mut map = |s: &'a [T]| -> Vec<u32> {
        s.iter()
            .map(|t| {
                let n = ids.len() as u32;
                *ids.entry(t).or_insert(n)
            })
            .collect()
    };
    let a = map(s1);
    let b = map(s2);
    (a, b, ids.len())
}

/// True when no two occurrences share or overlap positions on either side.
fn independent(starts: &[(usize, usize)], len: usize) -> bool {
    let disjoint = |mut v: Vec<usize>| {
        v.sort_unstable();
        v.windows(2).all(|w| w[1] - w[0] >= len)
    };
    starts.len() == 1
        || (disjoint(starts.iter().map(|s| s.0).collect()) && disjoint(starts.iter().map(|s| s.1).collect()))
}

/// Marks removed tokens; distinct per side so they never match.
const GONE_A: u32 = u32::MAX;
const GONE_B: u32 = u32::MAX - 1;

struct OverlapSearch<'a> {
    orig_a: &'a [u32],
    orig_b: &'a [u32],
    /// Live copies with removed tokens overwritten by the sentinels.
    a: Vec<u32>,
    b: Vec<u32>,
    symbols: usize,
    dp: Vec<u32>,
    /// Scores of states reached after a tie, keyed by packed liveness bits.
    memo: HashMap<Vec<u64>, u64>,
}

impl OverlapSearch<'_> {
    /// Longest shared live run and the start pairs achieving it, ordered by
    /// position in `a` then `b`.
    fn longest(&mut self) -> (usize, Vec<(usize, usize)>) {
        let m = self.b.len();
        // Two rolling rows of run lengths ending at (i, j).
        self.dp.clear();
        self.dp.resize(2 * (m + 1), 0);
        let (mut best, mut starts) = (0u32, Vec::new());
        for (i, &x) in self.a.iter().enumerate() {
            let (prev, cur) = if i % 2 == 0 {
                let (p, c) = self.dp.split_at_mut(m + 1);
                (&*p, c)
            } else {
                let (c, p) = self.dp.split_at_mut(m + 1);
                (&*p, c)
            };
            for (j, &y) in self.b.iter().enumerate() {
                let l = if x == y { prev[j] + 1 } else { 0 };
                cur[j + 1] = l;
                if l >= best && l > 0 {
                    if l > best {
                        best = l;
                        starts.clear();
                    }
                    starts.push((i + 1 - l as usize, j + 1 - l as usize));
                }
            }
        }
        starts.sort_unstable();
        (best as usize, starts)
    }

    /// Multiset intersection size of the live tokens.
    fn live_intersection(&self) -> u64 {
        let mut counts = vec![0u32; self.symbols];
        for &t in self.a.iter().filter(|&&t| t != GONE_A) {
            counts[t as usize] += 1;
        }
        let mut shared = 0;
        for &t in self.b.iter().filter(|&&t| t != GONE_B) {
            let c = &mut counts[t as usize];
            if *c > 0 {
                *c -= 1;
                shared += 1;
            }
        }
        shared
    }

    fn key(&self) -> Vec<u64> {
        let mut words = vec![0u64; (self.a.len() + self.b.len()).div_ceil(64)];
        let live = self
            .a
            .iter()
            .map(|&t| t != GONE_A)
            .chain(self.b.iter().map(|&t| t != GONE_B));
        for (k, alive) in live.enumerate() {
            if alive {
                words[k / 64] |= 1 << (k % 64);
            }
        }
        words
    }

    fn remove(&mut self, len: usize, (i, j): (usize, usize)) {
        self.a[i..i + len].fill(GONE_A);
        self.b[j..j + len].fill(GONE_B);
    }

    fn restore(&mut self, len: usize, (i, j): (usize, usize)) {
        self.a[i..i + len].copy_from_slice(&self.orig_a[i..i + len]);
        self.b[j..j + len].copy_from_slice(&self.orig_b[j..j + len]);
    }

    fn best(&mut self) -> u64 {
        let (len, starts) = self.longest();
        match (len, starts.len()) {
            (0, _) => 0,
            // Once only single tokens remain every removal order agrees.
            (1, _) => self.live_intersection(),
            // Disjoint, one-to-one ties survive each other's removal, so
            // every order ends in the same state.
            (_, k) if independent(&starts, len) => {
                starts.iter().for_each(|&s| self.remove(len, s));
                let rest = self.best();
                starts.iter().for_each(|&s| self.restore(len, s));
                (k * len * len) as u64 + rest
            }
            _ => {
                let key = self.key();
                if let Some(&v) = self.memo.get(&key) {
                    return v;
                }
                let mut best = 0;
                for start in starts {
                    self.remove(len, start);
                    best = best.max((len * len) as u64 + self.best());
                    self.restore(len, start);
                }
                self.memo.insert(key, best);
                best
            }
        }
    }
}

/// Sum of squared lengths of greedily removed maximal shared phrases.
pub fn phrase_overlap<T: Eq + Hash>(s1: &[T], s2: &[T]) -> u64 {
    let (a, b, symbols) = intern(s1, s2);
    let mut search = OverlapSearch {
        orig_a: &a,
        orig_b: &b,
        a: a.clone(),
        b: b.clone(),
        symbols,
        dp: Vec::new(),
        memo: HashMap::new(),
    };
    search.best()
}

/// `tanh(overlap / (|s1| + |s2|))`.
pub fn phrase_sim<T: Eq + Hash>(s1: &[T], s2: &[T]) -> Result<f64, EvalError> {
    let total = s1.len() + s2.len();
    if total == 0 {
        return Err(EvalError::BothEmpty);
    }
    Ok((phrase_overlap(s1, s2) as f64 / total as f64).tanh())
}

/// Jaccard index of the contiguous `k`-gram sets; 0 when both sets are empty.
pub fn k_jaccard<T: Eq + Hash>(s1: &[T], s2: &[T], k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let g1: HashSet<&[T]> = s1.windows(k).collect();
    let g2: HashSet<&[T]> = s2.windows(k).collect();
    let union = g1.union(&g2).count();
    if union == 0 {
        return 0.0;
    }
    g1.intersection(&g2).count() as f64 / union as f64
}

// ---------------------------------------------------------------------------
// Novelty protocol
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub exploration: f64,
    pub sample_count: usize,
    pub k: usize,
    pub max_tokens: usize,
    pub rng_seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            exploration: 0.1,
            sample_count: 100,
            k: 4,
            max_tokens: 30,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    /// Corpus index of the sentence whose first half seeded generation.
    pub sample_index: usize,
    pub generated_text: String,
    /// Corpus index with the highest phrase similarity.
    pub best_match_index: usize,
    pub k_jaccard: f64,
    pub phrase_overlap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    pub category: CategoryTag,
    pub exploration: f64,
    pub k_jaccard_mean: f64,
    pub phrase_overlap_mean: f64,
    pub per_sample: Vec<SampleScore>,
}

/// Seeds generation with the first half of randomly sampled corpus
/// sentences, generates under every category, and records for each
/// continuation (seed excluded) its maximum similarity to all corpus
/// sentences other than the one it was seeded from.
pub fn novelty_protocol(
    corpus: &Corpus,
    params: &ModelParams,
    mcfg: &ModelConfig,
    cfg: &ProtocolConfig,
) -> Result<Vec<SimilarityReport>, EvalError> {
    let n = corpus.records.len();
    if n == 0 {
        return Err(EvalError::EmptyCorpus);
    }
    let count = if cfg.sample_count > n {
        log::warn!("sample count {} exceeds corpus size {n}; using {n}", cfg.sample_count);
        n
    } else {
        cfg.sample_count
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let picks = sample(&mut rng, n, count).into_vec();
    let contents: Vec<&[usize]> = corpus.records.iter().map(|r| r.content()).collect();

    let mut reports: Vec<SimilarityReport> = (0..mcfg.num_categories)
        .map(|c| SimilarityReport {
            category: CategoryTag(c),
            exploration: cfg.exploration,
            k_jaccard_mean: 0.0,
            phrase_overlap_mean: 0.0,
            per_sample: Vec::with_capacity(count),
        })
        .collect();

    for &s in &picks {
        let content = contents[s];
        let seed: Vec<String> = corpus.vocab.decode(&content[..content.len() / 2]);
        for report in reports.iter_mut() {
            let gen = generate(
                params,
                mcfg,
                &corpus.vocab,
                &GenerationConfig {
                    category: report.category,
                    exploration: cfg.exploration,
                    seed_text: seed.clone(),
                    max_tokens: cfg.max_tokens,
                    rng_seed: rng.gen(),
                },
            )?;
            let cont: Vec<usize> = gen.generated.iter().map(|t| corpus.vocab.encode(t)).collect();
            let mut best_sim = 0.0;
            let mut best_idx = if s == 0 && n > 1 { 1 } else { 0 };
            let mut best_jac = 0.0f64;
            for (j, other) in contents.iter().enumerate() {
                if j == s {
                    continue;
                }
                let sim = phrase_sim(&cont, other)?;
                if sim > best_sim {
                    best_sim = sim;
                    best_idx = j;
                }
                best_jac = best_jac.max(k_jaccard(&cont, other, cfg.k));
            }
            report.per_sample.push(SampleScore {
                sample_index: s,
                generated_text: gen.text(),
                best_match_index: best_idx,
                k_jaccard: best_jac,
                phrase_overlap: best_sim,
            });
        }
    }
    for r in reports.iter_mut() {
        let m = r.per_sample.len().max(1) as f64;
        r.k_jaccard_mean = r.per_sample.iter().map(|p| p.k_jaccard).sum::<f64>() / m;
        r.phrase_overlap_mean = r.per_sample.iter().map(|p| p.phrase_overlap).sum::<f64>() / m;
    }
    Ok(reports)
}

pub const REPORT_HEADER: &str = "category\texploration\tsample_index\tk_jaccard\tphrase_overlap\tbest_match_index";

pub fn write_report_tsv<W: Write>(reports: &[SimilarityReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for r in reports {
        for p in &r.per_sample {
            writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
                r.category, r.exploration, p.sample_index, p.k_jaccard, p.phrase_overlap, p.best_match_index
            )?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Parser preparation
// ---------------------------------------------------------------------------

fn capitalize_first(s: &str) -> String {
    let mut done = false;
    s.chars()
        .map(|c| {
            if !done && c.is_alphabetic() {
                done = true;
                c.to_uppercase().next().unwrap_or(c)
            } else {
                c
            }
        })
        .collect()
}

fn capitalize_pronoun(word: &str) -> String {
    if word == "i" || word.starts_with("i'") {
        let mut w = String::with_capacity(word.len());
        w.push('I');
        w.push_str(&word[1..]);
        w
    } else {
        word.to_string()
    }
}

/// Splits texts into sentences at `.`, `!` and `?`, capitalises each
/// sentence's first letter and the pronoun "i", one sentence per entry.
pub fn parser_prep<S: AsRef<str>>(texts: &[S]) -> Vec<String> {
    let mut out = Vec::new();
    for text in texts {
        let mut current = String::new();
        let mut chars = text.as_ref().chars().peekable();
        while let Some(c) = chars.next() {
            current.push(c);
            if matches!(c, '.' | '!' | '?') {
                while let Some(&n) = chars.peek() {
                    if matches!(n, '.' | '!' | '?') {
                        current.push(n);
                        chars.next();
                    } else {
                        break;
                    }
                }
                push_sentence(&mut out, &current);
                current.clear();
            }
        }
        push_sentence(&mut out, &current);
    }
    out
}

fn push_sentence(out: &mut Vec<String>, raw: &str) {
    let words: Vec<String> = raw.split_whitespace().map(capitalize_pronoun).collect();
    if words.is_empty() {
        return;
    }
    out.push(capitalize_first(&words.join(" ")));
}
