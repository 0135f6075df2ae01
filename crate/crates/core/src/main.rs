use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use catgen::config::{apply_config, read_config_file, snapshot};
use catgen::corpus::{clean_text, load_dataset, prepare_lines, tokenize, CategoryTag};
use catgen::embeddings::load_pretrained;
use catgen::eval::{novelty_protocol, parser_prep, write_report_tsv, ProtocolConfig};
use catgen::generator::{generate, GenerationConfig};
use catgen::manifest::{manifest_path_for, RunManifest};
use catgen::trainer::{train_from, EpochReport, Experiment, TrainError};
use catgen::{Checkpoint, ModelConfig, ModelParams, TrainingConfig};

/// Category-conditioned LSTM text generation.
#[derive(Parser)]
#[command(name = "catgen", version)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, tokenize and deduplicate raw text files into a dataset directory.
    Prepare(PrepareArgs),
    /// Train a model on a prepared dataset.
    Train(TrainArgs),
    /// Generate text for a category from a checkpoint.
    Generate(GenerateArgs),
    /// Score generated text novelty against the training corpus.
    Eval(EvalArgs),
    /// Split generated text into capitalised sentences, one per line.
    ParserPrep(ParserPrepArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Input file with its category id, as `<file>:<category>`; repeatable.
    #[arg(long = "input", required = true, value_name = "FILE:CATEGORY")]
    inputs: Vec<String>,
    /// Vocabulary size including the four special tokens.
    #[arg(long, value_name = "N")]
    max_vocab: usize,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Add every sentence reversed under category 1 (single category-0 input only).
    #[arg(long)]
    reverse_augment: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Prepared dataset directory.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// key=value config file; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long, value_name = "CKPT")]
    out: PathBuf,
    /// Number of epochs.
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Batch size.
    #[arg(long, value_name = "N")]
    batch: Option<usize>,
    /// Adam learning rate.
    #[arg(long, value_name = "F")]
    lr: Option<f64>,
    /// RNG seed for initialisation, sampling and dropout.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// just-jokes, forward-reverse or three-category.
    #[arg(long, value_name = "NAME")]
    experiment: Option<String>,
    /// Pretrained word vectors (text format) for the frozen embedding.
    #[arg(long, value_name = "FILE")]
    glove: Option<PathBuf>,
    /// Append per-epoch `epoch<TAB>loss<TAB>accuracy<TAB>seconds` lines here.
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
    /// Also write `<out>.epoch<N>` every N epochs (0 = never).
    #[arg(long, value_name = "N")]
    checkpoint_every: Option<usize>,
    /// Continue from this checkpoint's parameters and optimizer state.
    #[arg(long, value_name = "CKPT")]
    resume: Option<PathBuf>,
    /// Disable gradient clipping.
    #[arg(long)]
    no_clip: bool,
}

#[derive(Args)]
struct GenerateArgs {
    /// Trained checkpoint.
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Category id to condition on.
    #[arg(long, value_name = "N")]
    category: usize,
    /// Seed text fed before generation.
    #[arg(long, value_name = "TEXT", default_value = "")]
    seed: String,
    /// Probability of sampling from the softmax instead of taking the argmax.
    #[arg(long, value_name = "F", default_value_t = 0.0)]
    exploration: f64,
    /// Stop after this many generated tokens if `<eos>` has not appeared.
    #[arg(long, value_name = "N", default_value_t = 30)]
    max_tokens: usize,
    /// Seed for the exploration draws.
    #[arg(long, value_name = "N", default_value_t = 0)]
    rng_seed: u64,
    /// Number of texts; text i uses rng seed `rng-seed + i`.
    #[arg(long, value_name = "K", default_value_t = 1)]
    count: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint.
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Prepared dataset directory the checkpoint was trained on.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Exploration factor used for every generated continuation.
    #[arg(long, value_name = "F", default_value_t = 0.1)]
    exploration: f64,
    /// Number of seed sentences.
    #[arg(long, value_name = "N", default_value_t = 100)]
    samples: usize,
    /// Seed for sentence sampling and generation.
    #[arg(long, value_name = "N", default_value_t = 0)]
    rng_seed: u64,
    /// Output TSV report.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct ParserPrepArgs {
    /// Generated text, one text per line.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Output file, one sentence per line.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::new().parse_filters(level).init();
    let result = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Eval(a) => eval(a),
        Command::ParserPrep(a) => parser_prep_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let mut inputs = Vec::new();
    let mut manifest = RunManifest::new("prepare");
    for arg in &a.inputs {
        let (file, cat) = arg
            .rsplit_once(':')
            .with_context(|| format!("--input {arg:?} must be <file>:<category>"))?;
        let cat: usize = cat
            .parse()
            .with_context(|| format!("--input {arg:?}: invalid category id"))?;
        let text = read_text(Path::new(file))?;
        inputs.push((CategoryTag(cat), text.lines().map(str::to_string).collect()));
        manifest.inputs.push(PathBuf::from(file));
        manifest.config.insert(format!("input.{file}"), cat.to_string());
    }
    let prepared = prepare_lines(&inputs, a.max_vocab, a.reverse_augment)?;
    let outputs = prepared.write(&a.out)?;
    log::info!(
        "{} sentences, {} categories, vocabulary {}",
        prepared.sentences.len(),
        prepared.num_categories,
        prepared.vocab.len()
    );
    manifest.config.insert("max_vocab".into(), a.max_vocab.to_string());
    manifest
        .config
        .insert("reverse_augment".into(), a.reverse_augment.to_string());
    manifest.outputs = outputs;
    manifest.write(&a.out.join("run.manifest"))?;
    Ok(())
}

fn append_log(path: &Path, report: &EpochReport) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", report.log_line())
}

fn epoch_path(out: &Path, epoch: usize) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".epoch{epoch}"));
    out.with_file_name(name)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut mcfg = ModelConfig::default();
    let mut tcfg = TrainingConfig::default();
    let mut experiment_name = None;
    let mut glove = None;
    if let Some(path) = &a.config {
        let kv = read_config_file(path)?;
        apply_config(&kv, &mut mcfg, &mut tcfg, &["experiment", "glove"])?;
        experiment_name = kv.get("experiment").cloned();
        glove = kv.get("glove").map(PathBuf::from);
    }
    if let Some(v) = a.epochs {
        tcfg.epochs = v;
    }
    if let Some(v) = a.batch {
        tcfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        tcfg.lr = v;
    }
    if let Some(v) = a.seed {
        tcfg.rng_seed = v;
    }
    if let Some(v) = a.checkpoint_every {
        tcfg.checkpoint_every = v;
    }
    if a.no_clip {
        tcfg.clip_norm = None;
    }
    experiment_name = a.experiment.or(experiment_name);
    glove = a.glove.or(glove);
    let experiment: Experiment = experiment_name.as_deref().unwrap_or("three-category").parse()?;

    let (corpus, data_manifest) = load_dataset(&a.data)?;
    let reverse_augmented = data_manifest.get("reverse_augmented").is_some_and(|v| v == "true");
    let corpus = experiment.build_corpus(corpus, reverse_augmented)?;
    mcfg.vocab_size = corpus.vocab.len();
    mcfg.num_categories = corpus.num_categories;

    let mut manifest = RunManifest::new("train");
    manifest.inputs.push(a.data.clone());

    let (params, optimizer) = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.vocab != corpus.vocab {
                bail!("checkpoint {} was trained on a different vocabulary", path.display());
            }
            if ck.config != mcfg {
                log::warn!("using the model configuration stored in {}", path.display());
            }
            mcfg = ck.config;
            manifest.inputs.push(path.clone());
            (ck.params, ck.optimizer)
        }
        None => {
            let mut params = ModelParams::init(&mcfg, tcfg.rng_seed)?;
            if let Some(path) = &glove {
                let hits = load_pretrained(path, &corpus.vocab, &mut params.glove)?;
                log::info!("pretrained vectors for {hits} of {} tokens", corpus.vocab.len());
                manifest.inputs.push(path.clone());
            }
            (params, None)
        }
    };

    let mut written = Vec::new();
    let outcome = train_from(&corpus, &tcfg, &mcfg, params, optimizer, |report, params, adam| {
        if let Some(log) = &a.log {
            append_log(log, report).map_err(|e| TrainError::Callback(format!("{}: {e}", log.display())))?;
        }
        if tcfg.checkpoint_every > 0 && report.epoch % tcfg.checkpoint_every == 0 {
            let path = epoch_path(&a.out, report.epoch);
            Checkpoint {
                config: mcfg.clone(),
                vocab: corpus.vocab.clone(),
                params: params.clone(),
                optimizer: Some(adam.clone()),
            }
            .save(&path)
            .map_err(|e| TrainError::Callback(e.to_string()))?;
            written.push(path);
        }
        Ok(())
    })?;
    if let Some(last) = outcome.reports.last() {
        log::info!(
            "final loss {:.4}, accuracy {:.4}",
            last.mean_loss,
            last.next_token_accuracy
        );
    }
    let ck = Checkpoint {
        config: mcfg.clone(),
        vocab: corpus.vocab.clone(),
        params: outcome.params,
        optimizer: Some(outcome.optimizer),
    };
    ck.save(&a.out)?;

    manifest.config = snapshot(&mcfg, &tcfg);
    manifest.config.insert("experiment".into(), experiment.name().into());
    if let Some(g) = &glove {
        manifest.config.insert("glove".into(), g.display().to_string());
    }
    if let Some(r) = &a.resume {
        manifest.config.insert("resume".into(), r.display().to_string());
    }
    manifest.seeds.insert("init".into(), tcfg.rng_seed);
    manifest.seeds.insert("sampler".into(), tcfg.rng_seed.wrapping_add(1));
    manifest.seeds.insert("dropout".into(), tcfg.rng_seed.wrapping_add(2));
    manifest.outputs.push(a.out.clone());
    manifest.outputs.extend(written);
    manifest.write(&manifest_path_for(&a.out))?;
    Ok(())
}

fn generate_cmd(a: GenerateArgs) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    if a.category >= ck.config.num_categories {
        bail!(
            "category {} out of range (model has {} categories)",
            a.category,
            ck.config.num_categories
        );
    }
    let seed_text = tokenize(&clean_text(&a.seed));
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for i in 0..a.count {
        let g = generate(
            &ck.params,
            &ck.config,
            &ck.vocab,
            &GenerationConfig {
                category: CategoryTag(a.category),
                exploration: a.exploration,
                seed_text: seed_text.clone(),
                max_tokens: a.max_tokens,
                rng_seed: a.rng_seed.wrapping_add(i),
            },
        )?;
        writeln!(out, "{}", g.text())?;
    }
    out.flush()?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let (corpus, _) = load_dataset(&a.data)?;
    if corpus.vocab != ck.vocab {
        bail!("dataset {} does not match the checkpoint vocabulary", a.data.display());
    }
    let cfg = ProtocolConfig {
        exploration: a.exploration,
        sample_count: a.samples,
        rng_seed: a.rng_seed,
        ..ProtocolConfig::default()
    };
    let reports = novelty_protocol(&corpus, &ck.params, &ck.config, &cfg)?;
    for r in &reports {
        log::info!(
            "category {}: k-jaccard {:.4}, phrase overlap {:.4}",
            r.category,
            r.k_jaccard_mean,
            r.phrase_overlap_mean
        );
    }
    let file = fs::File::create(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    write_report_tsv(&reports, &mut w)?;
    w.flush()?;

    let mut manifest = RunManifest::new("eval");
    manifest.config.insert("exploration".into(), a.exploration.to_string());
    manifest.config.insert("samples".into(), a.samples.to_string());
    manifest.config.insert("k".into(), cfg.k.to_string());
    manifest.config.insert("max_tokens".into(), cfg.max_tokens.to_string());
    manifest.seeds.insert("protocol".into(), a.rng_seed);
    manifest.inputs = vec![a.ckpt, a.data];
    manifest.outputs.push(a.out.clone());
    manifest.write(&manifest_path_for(&a.out))?;
    Ok(())
}

fn parser_prep_cmd(a: ParserPrepArgs) -> Result<()> {
    let text = read_text(&a.input)?;
    let lines: Vec<&str> = text.lines().collect();
    let mut body = parser_prep(&lines).join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    fs::write(&a.out, body).with_context(|| format!("cannot write {}", a.out.display()))?;
    let mut manifest = RunManifest::new("parser-prep");
    manifest.inputs.push(a.input);
    manifest.outputs.push(a.out.clone());
    manifest.write(&manifest_path_for(&a.out))?;
    Ok(())
}
