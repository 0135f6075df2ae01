use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn catgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catgen"))
        .args(args)
        .output()
        .expect("failed to run catgen")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    o
}

const SMALL_CONFIG: &str = "\
# reduced model for smoke tests
glove_dim = 8
input_embed_dim = 8
dense1_dim = 16
lstm1_dim = 16
lstm2_dim = 8
dense2_dim = 8
seq_len = 8
epochs = 2
batch_size = 8
";

struct Run {
    dir: TempDir,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    /// Prepares the two fixture files and trains a small two-epoch model.
    fn trained() -> Run {
        let run = Run {
            dir: TempDir::new().unwrap(),
        };
        let jokes = format!("{}:0", fixture("jokes.txt"));
        let quotes = format!("{}:1", fixture("quotes.txt"));
        ok(catgen(&[
            "prepare",
            "--input",
            &jokes,
            "--input",
            &quotes,
            "--max-vocab",
            "200",
            "--out",
            &run.p("data"),
        ]));
        fs::write(run.path("small.cfg"), SMALL_CONFIG).unwrap();
        ok(catgen(&[
            "train",
            "--data",
            &run.p("data"),
            "--config",
            &run.p("small.cfg"),
            "--out",
            &run.p("model.ckpt"),
            "--log",
            &run.p("train.log"),
        ]));
        run
    }
}

#[test]
fn prepare_train_generate_eval() {
    let run = Run::trained();
    for f in ["dataset.tsv", "vocab.txt", "manifest.txt", "run.manifest"] {
        assert!(run.path("data").join(f).is_file(), "missing {f}");
    }
    let log = fs::read_to_string(run.path("train.log")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().all(|l| l.split('\t').count() == 4));

    let manifest = fs::read_to_string(run.path("model.ckpt.manifest")).unwrap();
    for needle in [
        "subcommand=train",
        "config.epochs=2",
        "config.num_categories=2",
        "seed.init=0",
        "output.0.sha256=",
    ] {
        assert!(manifest.contains(needle), "manifest lacks {needle}:\n{manifest}");
    }

    let ckpt = run.p("model.ckpt");
    let out = ok(catgen(&[
        "generate",
        "--ckpt",
        &ckpt,
        "--category",
        "1",
        "--exploration",
        "0",
        "--rng-seed",
        "7",
    ]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1);

    let out = ok(catgen(&[
        "generate",
        "--ckpt",
        &ckpt,
        "--category",
        "0",
        "--exploration",
        "0.5",
        "--count",
        "3",
        "--seed",
        "Why did",
    ]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.starts_with("why did")), "{text}");

    let report = run.p("report.tsv");
    ok(catgen(&[
        "eval",
        "--ckpt",
        &ckpt,
        "--data",
        &run.p("data"),
        "--samples",
        "5",
        "--out",
        &report,
    ]));
    let tsv = fs::read_to_string(&report).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 2 * 5);
    assert!(run.path("report.tsv.manifest").is_file());
}

#[test]
fn reruns_are_byte_identical() {
    let a = Run::trained();
    let b = Run::trained();
    assert_eq!(
        fs::read(a.path("model.ckpt")).unwrap(),
        fs::read(b.path("model.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read(a.path("data/dataset.tsv")).unwrap(),
        fs::read(b.path("data/dataset.tsv")).unwrap()
    );
    let gen = |r: &Run| {
        ok(catgen(&[
            "generate",
            "--ckpt",
            &r.p("model.ckpt"),
            "--category",
            "0",
            "--exploration",
            "0.8",
            "--count",
            "4",
        ]))
        .stdout
    };
    assert_eq!(gen(&a), gen(&b));
}

#[test]
fn resume_and_epoch_checkpoints() {
    let run = Run::trained();
    ok(catgen(&[
        "train",
        "--data",
        &run.p("data"),
        "--config",
        &run.p("small.cfg"),
        "--resume",
        &run.p("model.ckpt"),
        "--epochs",
        "2",
        "--checkpoint-every",
        "1",
        "--out",
        &run.p("resumed.ckpt"),
    ]));
    assert!(run.path("resumed.ckpt.epoch1").is_file());
    assert!(run.path("resumed.ckpt.epoch2").is_file());
    // The final checkpoint is the last epoch's state.
    assert_eq!(
        fs::read(run.path("resumed.ckpt")).unwrap(),
        fs::read(run.path("resumed.ckpt.epoch2")).unwrap()
    );
    assert_ne!(
        fs::read(run.path("resumed.ckpt")).unwrap(),
        fs::read(run.path("model.ckpt")).unwrap()
    );
    let manifest = fs::read_to_string(run.path("resumed.ckpt.manifest")).unwrap();
    assert!(manifest.contains("config.resume="));
}

#[test]
fn missing_checkpoint_is_a_clean_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent.ckpt").display().to_string();
    let o = catgen(&["generate", "--ckpt", &missing, "--category", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains(&missing), "{err}");
}

#[test]
fn bad_inputs_are_rejected() {
    let run = Run::trained();
    let o = catgen(&["generate", "--ckpt", &run.p("model.ckpt"), "--category", "5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("out of range"));

    fs::write(run.path("bad.cfg"), "lstm_size = 3\n").unwrap();
    let o = catgen(&[
        "train",
        "--data",
        &run.p("data"),
        "--config",
        &run.p("bad.cfg"),
        "--out",
        &run.p("x.ckpt"),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lstm_size"), "{}", stderr(&o));

    let o = catgen(&[
        "prepare",
        "--input",
        "no-category-here",
        "--max-vocab",
        "10",
        "--out",
        &run.p("d2"),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_and_help() {
    let o = catgen(&["generate", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = catgen(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));

    let o = ok(catgen(&["--help"]));
    let help = String::from_utf8(o.stdout).unwrap();
    for sub in ["prepare", "train", "generate", "eval", "parser-prep"] {
        assert!(help.contains(sub), "{help}");
    }
    let o = ok(catgen(&["train", "--help"]));
    let help = String::from_utf8(o.stdout).unwrap();
    for flag in [
        "--data",
        "--config",
        "--out",
        "--epochs",
        "--lr",
        "--seed",
        "--resume",
        "--no-clip",
    ] {
        assert!(help.contains(flag), "{help}");
    }
}

#[test]
fn parser_prep_splits_and_capitalises() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("gen.txt");
    let out = dir.path().join("sentences.txt");
    fs::write(&input, "i think so . but i'm not sure !\nwhat now\n").unwrap();
    ok(catgen(&[
        "parser-prep",
        "--in",
        &input.display().to_string(),
        "--out",
        &out.display().to_string(),
    ]));
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        "I think so .\nBut I'm not sure !\nWhat now\n"
    );
    assert!(dir.path().join("sentences.txt.manifest").is_file());
}
