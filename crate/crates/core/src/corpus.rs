//! Corpus preparation: cleaning, tokenization, vocabulary, framing and
//! windowing of categorical sentences, plus the on-disk dataset layout.
//!
//! Cleaning rules, applied in order:
//! 1. lowercase;
//! 2. typographic quotes (`‘ ’ “ ”`) become ASCII `'` and `"`;
//! 3. control characters that are whitespace become spaces, all other
//!    control characters are dropped;
//! 4. whitespace-delimited chunks starting with `http://`, `https://` or
//!    `www.` are dropped;
//! 5. runs of whitespace collapse to a single space, ends are trimmed.
//!
//! Tokenization rules on cleaned text:
//! * a word is a run of alphanumeric characters; an apostrophe or hyphen
//!   *between* two alphanumerics stays inside the word (`what's`,
//!   `can't`, `well-known`);
//! * a numeral may carry an inner `.` or `,` between digits (`3.14`,
//!   `1,000`);
//! * every other non-space character is a token of its own.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const SOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
pub const NUM_SPECIAL: usize = 4;

pub const DATASET_FILE: &str = "dataset.tsv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("vocabulary max size must exceed {NUM_SPECIAL}, got {0}")]
    VocabTooSmall(usize),
    #[error("invalid sentence record: {0}")]
    InvalidRecord(String),
    #[error("category {category} out of range for {num_categories} categories")]
    CategoryOutOfRange { category: usize, num_categories: usize },
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("reverse augmentation needs single-category input, found category {0}")]
    ReverseNeedsSingleCategory(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Text category index (0 = joke, 1 = quote, 2 = tweet in the three-way setup).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CategoryTag(pub usize);

impl CategoryTag {
    pub fn id(self) -> usize {
        self.0
    }
}

impl fmt::Display for CategoryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

// ---------------------------------------------------------------------------
// Cleaning and tokenization
// ---------------------------------------------------------------------------

fn is_url(chunk: &str) -> bool {
    chunk.starts_with("http://") || chunk.starts_with("https://") || chunk.starts_with("www.")
}

pub fn clean_text(raw: &str) -> String {
    let mut normalized = String::with_capacity(raw.len());
    for ch in raw.chars().flat_map(char::to_lowercase) {
        match ch {
            '\u{2018}' | '\u{2019}' => normalized.push('\''),
            '\u{201c}' | '\u{201d}' => normalized.push('"'),
            c if c.is_control() => {
                if c.is_whitespace() {
                    normalized.push(' ');
                }
            }
            c => normalized.push(c),
        }
    }
    normalized
        .split_whitespace()
        .filter(|chunk| !is_url(chunk))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if !c.is_alphanumeric() {
            tokens.push(c.to_string());
            i += 1;
            continue;
        }
        let start = i;
        i += 1;
        while i < chars.len() {
            let c = chars[i];
            if c.is_alphanumeric() {
                i += 1;
                continue;
            }
            let next_alnum = chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
            let joins_word = (c == '\'' || c == '-') && next_alnum;
            let joins_number = (c == '.' || c == ',')
                && chars[i - 1].is_ascii_digit()
                && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
            if joins_word || joins_number {
                i += 2;
            } else {
                break;
            }
        }
        tokens.push(chars[start..i].iter().collect());
    }
    tokens
}

/// Drops exact repeats, keeping first occurrences in order.
pub fn deduplicate<T: Clone + Eq + std::hash::Hash>(sentences: &[T]) -> Vec<T> {
    let mut seen = HashSet::new();
    sentences.iter().filter(|s| seen.insert(*s)).cloned().collect()
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Vocabulary holding only the four reserved tokens.
    pub fn specials() -> Self {
        let id_to_token: Vec<String> = [PAD, UNK, SOS, EOS].iter().map(|s| s.to_string()).collect();
        let token_to_id = id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            token_to_id,
            id_to_token,
        }
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, CorpusError> {
        let specials = [PAD, UNK, SOS, EOS];
        if tokens.len() < NUM_SPECIAL || tokens[..NUM_SPECIAL].iter().zip(specials).any(|(a, b)| a != b) {
            return Err(CorpusError::InvalidRecord(
                "vocabulary must start with <pad>, <unk>, <sos>, <eos>".into(),
            ));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(CorpusError::InvalidRecord(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self {
            token_to_id,
            id_to_token: tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    /// Out-of-vocabulary tokens map to `<unk>`.
    pub fn encode(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_SPECIAL
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK).to_string()).collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let mut text = self.id_to_token.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Keeps the `max_size − 4` most frequent tokens; ties go to the token seen first.
pub fn build_vocabulary<S: AsRef<str>>(sentences: &[Vec<S>], max_size: usize) -> Result<Vocabulary, CorpusError> {
    if max_size <= NUM_SPECIAL {
        return Err(CorpusError::VocabTooSmall(max_size));
    }
    // (count, first-seen index)
    let mut stats: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut order = 0;
    for tok in sentences.iter().flatten() {
        let entry = stats.entry(tok.as_ref()).or_insert_with(|| {
            order += 1;
            (0, order)
        });
        entry.0 += 1;
    }
    let mut ranked: Vec<(&str, usize, usize)> = stats
        .into_iter()
        .filter(|(t, _)| ![PAD, UNK, SOS, EOS].contains(t))
        .map(|(t, (c, first))| (t, c, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let mut tokens = Vocabulary::specials().id_to_token;
    tokens.extend(
        ranked
            .into_iter()
            .take(max_size - NUM_SPECIAL)
            .map(|(t, _, _)| t.to_string()),
    );
    Vocabulary::from_tokens(tokens)
}

// ---------------------------------------------------------------------------
// Records and windows
// ---------------------------------------------------------------------------

/// A framed sentence: `<sos> content… <eos>` with at least one content token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentenceRecord {
    category: CategoryTag,
    tokens: Vec<usize>,
}

impl SentenceRecord {
    pub fn new(category: CategoryTag, tokens: Vec<usize>) -> Result<Self, CorpusError> {
        if tokens.len() < 3 {
            return Err(CorpusError::InvalidRecord(format!(
                "need at least 3 tokens, got {}",
                tokens.len()
            )));
        }
        if tokens[0] != SOS_ID || tokens[tokens.len() - 1] != EOS_ID {
            return Err(CorpusError::InvalidRecord(
                "record must start with <sos> and end with <eos>".into(),
            ));
        }
        if tokens[1..tokens.len() - 1].iter().any(|&t| t == SOS_ID || t == EOS_ID) {
            return Err(CorpusError::InvalidRecord("interior <sos>/<eos>".into()));
        }
        Ok(Self { category, tokens })
    }

    pub fn category(&self) -> CategoryTag {
        self.category
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    /// Token ids between the frame markers.
    pub fn content(&self) -> &[usize] {
        &self.tokens[1..self.tokens.len() - 1]
    }
}

/// Frames `tokens` with `<sos>`/`<eos>`; empty input yields `None`.
pub fn encode_sentence<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    category: CategoryTag,
) -> Option<SentenceRecord> {
    if tokens.is_empty() {
        return None;
    }
    let mut ids = Vec::with_capacity(tokens.len() + 2);
    ids.push(SOS_ID);
    ids.extend(tokens.iter().map(|t| vocab.encode(t.as_ref())));
    ids.push(EOS_ID);
    // Content ids never collide with the frame since specials cannot be
    // produced by the tokenizer.
    Some(SentenceRecord { category, tokens: ids })
}

/// Content order reversed, frame kept `<sos>`-first.
pub fn reverse_record(record: &SentenceRecord) -> SentenceRecord {
    let mut tokens = record.tokens.clone();
    let n = tokens.len();
    tokens[1..n - 1].reverse();
    SentenceRecord {
        category: record.category,
        tokens,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub category: CategoryTag,
    pub input_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    /// `false` on padded target positions.
    pub loss_mask: Vec<bool>,
}

impl TrainingExample {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }
}

/// Splits a record into stride-`len` windows of next-token examples.
///
/// Position `t` of a window starting at `s` has input `tokens[s + t]` and
/// target `tokens[s + t + 1]`; positions past the end are padded and masked.
pub fn window_examples(record: &SentenceRecord, len: usize) -> Vec<TrainingExample> {
    assert!(len >= 1, "window length must be at least 1");
    let tokens = &record.tokens;
    let n = tokens.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < n {
        let mut input_ids = Vec::with_capacity(len);
        let mut target_ids = Vec::with_capacity(len);
        let mut loss_mask = Vec::with_capacity(len);
        for t in 0..len {
            let src = start + t;
            input_ids.push(if src < n { tokens[src] } else { PAD_ID });
            if src + 1 < n {
                target_ids.push(tokens[src + 1]);
                loss_mask.push(true);
            } else {
                target_ids.push(PAD_ID);
                loss_mask.push(false);
            }
        }
        out.push(TrainingExample {
            category: record.category,
            input_ids,
            target_ids,
            loss_mask,
        });
        start += len;
    }
    out
}

// ---------------------------------------------------------------------------
// Corpus and dataset files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub records: Vec<SentenceRecord>,
    pub num_categories: usize,
}

impl Corpus {
    pub fn new(vocab: Vocabulary, records: Vec<SentenceRecord>, num_categories: usize) -> Result<Self, CorpusError> {
        for r in &records {
            if r.category.0 >= num_categories {
                return Err(CorpusError::CategoryOutOfRange {
                    category: r.category.0,
                    num_categories,
                });
            }
        }
        Ok(Self {
            vocab,
            records,
            num_categories,
        })
    }

    /// Builds a corpus directly from tokenized `(category, tokens)` pairs.
    pub fn from_sentences(
        sentences: &[(CategoryTag, Vec<String>)],
        max_vocab: usize,
        num_categories: usize,
    ) -> Result<Self, CorpusError> {
        let token_lists: Vec<Vec<String>> = sentences.iter().map(|(_, t)| t.clone()).collect();
        let vocab = build_vocabulary(&token_lists, max_vocab)?;
        let records = sentences
            .iter()
            .filter_map(|(c, t)| encode_sentence(t, &vocab, *c))
            .collect();
        Self::new(vocab, records, num_categories)
    }

    pub fn examples(&self, seq_len: usize) -> Vec<TrainingExample> {
        self.records.iter().flat_map(|r| window_examples(r, seq_len)).collect()
    }

    pub fn category_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_categories];
        for r in &self.records {
            counts[r.category.0] += 1;
        }
        counts
    }

    pub fn content_tokens(&self, index: usize) -> Vec<String> {
        self.vocab.decode(self.records[index].content())
    }
}

/// Tokenized, deduplicated sentences ready to be written as a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub sentences: Vec<(CategoryTag, Vec<String>)>,
    pub vocab: Vocabulary,
    pub num_categories: usize,
    pub reverse_augmented: bool,
}

/// Cleans, tokenizes and deduplicates raw lines from every input, then
/// builds the vocabulary. Deduplication keys on the token sequence alone, so
/// a sentence appearing under two categories keeps its first label.
pub fn prepare_lines(
    inputs: &[(CategoryTag, Vec<String>)],
    max_vocab: usize,
    reverse_augment: bool,
) -> Result<PreparedDataset, CorpusError> {
    let mut seen = HashSet::new();
    let mut sentences = Vec::new();
    for (cat, lines) in inputs {
        for line in lines {
            let tokens = tokenize(&clean_text(line));
            if tokens.is_empty() || !seen.insert(tokens.clone()) {
                continue;
            }
            sentences.push((*cat, tokens));
        }
    }
    let mut num_categories = inputs.iter().map(|(c, _)| c.0 + 1).max().unwrap_or(1);
    if reverse_augment {
        if let Some((c, _)) = inputs.iter().find(|(c, _)| c.0 != 0) {
            return Err(CorpusError::ReverseNeedsSingleCategory(c.0));
        }
        let reversed: Vec<_> = sentences
            .iter()
            .map(|(_, t)| (CategoryTag(1), t.iter().rev().cloned().collect::<Vec<_>>()))
            .collect();
        sentences.extend(reversed);
        num_categories = 2;
    }
    let token_lists: Vec<Vec<String>> = sentences.iter().map(|(_, t)| t.clone()).collect();
    let vocab = build_vocabulary(&token_lists, max_vocab)?;
    Ok(PreparedDataset {
        sentences,
        vocab,
        num_categories,
        reverse_augmented: reverse_augment,
    })
}

impl PreparedDataset {
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let data_path = dir.join(DATASET_FILE);
        let mut text = String::new();
        for (cat, toks) in &self.sentences {
            text.push_str(&format!("{}\t{}\n", cat.0, toks.join(" ")));
        }
        fs::write(&data_path, text).map_err(io_err(&data_path))?;

        let vocab_path = dir.join(VOCAB_FILE);
        self.vocab.write(&vocab_path)?;

        let mut counts = vec![0usize; self.num_categories];
        for (c, _) in &self.sentences {
            counts[c.0] += 1;
        }
        let mut manifest = BTreeMap::new();
        manifest.insert("num_categories".to_string(), self.num_categories.to_string());
        manifest.insert("sentences".to_string(), self.sentences.len().to_string());
        manifest.insert("vocab_size".to_string(), self.vocab.len().to_string());
        manifest.insert("reverse_augmented".to_string(), self.reverse_augmented.to_string());
        for (c, n) in counts.iter().enumerate() {
            manifest.insert(format!("count.{c}"), n.to_string());
        }
        let manifest_path = dir.join(MANIFEST_FILE);
        let text: String = manifest.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
        Ok(vec![data_path, vocab_path, manifest_path])
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str, path: &Path) -> Result<BTreeMap<String, String>, CorpusError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CorpusError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: "expected key=value".into(),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Reads a prepared dataset directory.
pub fn load_dataset(dir: &Path) -> Result<(Corpus, BTreeMap<String, String>), CorpusError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest = parse_key_values(&manifest_text, &manifest_path)?;
    let num_categories: usize = manifest
        .get("num_categories")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CorpusError::Parse {
            path: manifest_path.clone(),
            line: 0,
            msg: "missing or invalid num_categories".into(),
        })?;
    let vocab = Vocabulary::read(&dir.join(VOCAB_FILE))?;

    let data_path = dir.join(DATASET_FILE);
    let text = fs::read_to_string(&data_path).map_err(io_err(&data_path))?;
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: &str| CorpusError::Parse {
            path: data_path.clone(),
            line: n + 1,
            msg: msg.to_string(),
        };
        let (cat, toks) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected <category>\\t<tokens>"))?;
        let cat: usize = cat.parse().map_err(|_| parse_err("invalid category id"))?;
        let toks: Vec<&str> = toks.split(' ').filter(|t| !t.is_empty()).collect();
        let rec = encode_sentence(&toks, &vocab, CategoryTag(cat)).ok_or_else(|| parse_err("empty sentence"))?;
        records.push(rec);
    }
    Ok((Corpus::new(vocab, records, num_categories)?, manifest))
}
