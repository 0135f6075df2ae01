//! Small corpora and reduced models for the training-level tests.

use catgen::corpus::{CategoryTag, Corpus};
use catgen::generator::{generate, GenerationConfig};
use catgen::trainer::{train, EpochReport};
use catgen::{ModelConfig, ModelParams, TrainingConfig};

/// Twenty sentences; every first word and every last word is unique, so
/// both the forward and the reversed two-token prefix identify a sentence.
pub const MEMO_SENTENCES: [&str; 20] = [
    "apples eat near the river today",
    "bears eat the small fish and sleep tonight",
    "cats see a big hill slowly",
    "dogs run over the hill and we quickly",
    "eagles see the river under a big hill again",
    "foxes sleep near a small river outside",
    "geese eat and run near the big dogs inside",
    "horses run under the hill upstairs",
    "ibis see we eat a small fish downstairs",
    "jackals run and sleep alone",
    "koalas eat the big fish together",
    "lions sleep over the small hill forever",
    "mice run near we and see the river early",
    "newts eat a fish under the hill late",
    "owls see the big river often",
    "pigs sleep near a small fish rarely",
    "quails run over a big river north",
    "rats eat near the hill and sleep south",
    "seals see a fish over we east",
    "tigers run the small river west",
];

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Sentences 0–9 under category 0, 10–19 under category 1.
pub fn memo_corpus() -> Corpus {
    let sents: Vec<(CategoryTag, Vec<String>)> = MEMO_SENTENCES
        .iter()
        .enumerate()
        .map(|(i, s)| (CategoryTag(i / 10), words(s)))
        .collect();
    Corpus::from_sentences(&sents, 1000, 2).unwrap()
}

/// Every sentence forward under category 0 and reversed under category 1.
pub fn forward_reverse_corpus() -> Corpus {
    let mut sents: Vec<(CategoryTag, Vec<String>)> =
        MEMO_SENTENCES.iter().map(|s| (CategoryTag(0), words(s))).collect();
    sents.extend(MEMO_SENTENCES.iter().map(|s| {
        let mut w = words(s);
        w.reverse();
        (CategoryTag(1), w)
    }));
    Corpus::from_sentences(&sents, 1000, 2).unwrap()
}

/// Phrase grammar for the category-control corpus: a sentence is one
/// phrase from each of four slots. Earlier options are more frequent, so
/// like natural text the corpus repeats some phrases far more than others.
/// The three categories share no words.
pub const CATEGORY_GRAMMAR: [[[&str; 4]; 4]; 3] = [
    [
        ["the red house", "a dark wall", "one stone tower", "this glass door"],
        [
            "stands right beside",
            "leans hard against",
            "looks out over",
            "hides just behind",
        ],
        [
            "that green gate",
            "every bright window",
            "some painted roof",
            "our brick yard",
        ],
        [
            "in morning light",
            "during frosty winter",
            "after heavy storms",
            "on sunday evenings",
        ],
    ],
    [
        [
            "old fishing boats",
            "white canvas sails",
            "cold grey waves",
            "salty tangled nets",
        ],
        [
            "drift slowly toward",
            "crash loudly into",
            "rock gently along",
            "pull away from",
        ],
        [
            "distant quiet harbors",
            "sandy empty shores",
            "deep rising tides",
            "windy northern bays",
        ],
        [
            "under grey skies",
            "beneath pale moons",
            "through salt spray",
            "past lonely lighthouses",
        ],
    ],
    [
        [
            "loud marching drums",
            "soft grand pianos",
            "happy church choirs",
            "tiny silver bells",
        ],
        [
            "play softly below",
            "sing sweetly across",
            "ring clearly amid",
            "hum quietly inside",
        ],
        [
            "evening jazz songs",
            "slow folk tunes",
            "sweet high notes",
            "long summer concerts",
        ],
        [
            "with joyful rhythm",
            "at full volume",
            "for eager crowds",
            "until late midnight",
        ],
    ],
];

const OPTION_WEIGHTS: [u32; 4] = [8, 4, 2, 1];

/// Every word category `c` can produce.
pub fn category_vocabulary(c: usize) -> std::collections::HashSet<&'static str> {
    CATEGORY_GRAMMAR[c]
        .iter()
        .flatten()
        .flat_map(|p| p.split_whitespace())
        .collect()
}

/// Twenty distinct sentences per category, drawn from the grammar with a
/// fixed seed.
pub fn category_sentences() -> Vec<(CategoryTag, Vec<String>)> {
    use rand::distributions::{Distribution, WeightedIndex};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let pick = WeightedIndex::new(OPTION_WEIGHTS).unwrap();
    let mut out = Vec::new();
    for (c, slots) in CATEGORY_GRAMMAR.iter().enumerate() {
        let mut seen = std::collections::HashSet::new();
        while seen.len() < 20 {
            let sent: Vec<String> = slots
                .iter()
                .flat_map(|options| words(options[pick.sample(&mut rng)]))
                .collect();
            if seen.insert(sent.clone()) {
                out.push((CategoryTag(c), sent));
            }
        }
    }
    out
}

pub fn category_corpus() -> Corpus {
    Corpus::from_sentences(&category_sentences(), 1000, 3).unwrap()
}

/// Reduced model: embeddings 16, LSTM 32/16.
pub fn reduced_config(corpus: &Corpus) -> ModelConfig {
    ModelConfig {
        vocab_size: corpus.vocab.len(),
        glove_dim: 16,
        input_embed_dim: 16,
        dense1_dim: 32,
        lstm1_dim: 32,
        lstm2_dim: 16,
        dense2_dim: 16,
        dropout: 0.0,
        l2: 0.0,
        seq_len: 13,
        num_categories: corpus.num_categories,
    }
}

pub fn toy_training(epochs: usize, seed: u64) -> TrainingConfig {
    TrainingConfig {
        batch_size: 1,
        epochs,
        lr: 0.005,
        rng_seed: seed,
        ..TrainingConfig::default()
    }
}

pub fn train_toy(corpus: &Corpus, epochs: usize, seed: u64) -> (ModelConfig, ModelParams, Vec<EpochReport>) {
    let mcfg = reduced_config(corpus);
    let (params, reports) = train(corpus, &toy_training(epochs, seed), &mcfg).unwrap();
    (mcfg, params, reports)
}

/// Greedy continuation of `prefix` under `category`.
pub fn continue_greedy(
    corpus: &Corpus,
    mcfg: &ModelConfig,
    params: &ModelParams,
    category: usize,
    prefix: &[String],
) -> Vec<String> {
    generate(
        params,
        mcfg,
        &corpus.vocab,
        &GenerationConfig {
            category: CategoryTag(category),
            exploration: 0.0,
            seed_text: prefix.to_vec(),
            max_tokens: 20,
            rng_seed: 0,
        },
    )
    .unwrap()
    .tokens()
}

/// Upper bound on next-token accuracy for any predictor that sees only the
/// category and the tokens so far: at each distinct (category, prefix) the
/// best it can do is the most frequent next token.
pub fn bayes_accuracy_ceiling(corpus: &Corpus) -> f64 {
    use std::collections::HashMap;
    let mut table: HashMap<(usize, Vec<usize>), HashMap<usize, usize>> = HashMap::new();
    let mut total = 0;
    for r in &corpus.records {
        let t = r.tokens();
        for i in 1..t.len() {
            *table
                .entry((r.category().0, t[..i].to_vec()))
                .or_default()
                .entry(t[i])
                .or_default() += 1;
            total += 1;
        }
    }
    let best: usize = table.values().map(|m| m.values().max().unwrap()).sum();
    best as f64 / total as f64
}
