use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use slu::cli::{run, RunConfig};

const TOY: &str = "\
[run]
seed = 7
threads = 1

[dsp]
n_mels = 20

[encoder]
n_layers = 2
hidden = 8

[decoder]
ff_hidden = 16
target = domain

[train]
batch_size = 4
max_epochs = 12
patience = 12
lr = 0.01

[synth]
n_domains = 2
intents_per_domain = 1
n_per_intent = 10

[text]
embedding_dim = 8
hidden = 8
";

fn slu(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_slu"));
    for a in args {
        c.arg(a);
    }
    c.env_remove("SLU_THREADS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn unknown_subcommand_prints_usage() {
    assert_eq!(run(&["frobnicate"]), 2);
    let o = slu(&[&"frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(slu(&[]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    for (text, needle) in [
        ("[train]\nbogus = 1\n", "unknown key `bogus`"),
        ("[nope]\n", "unknown section"),
        ("seed = 1\n", "outside any section"),
        ("[train]\nlr = -1\n", "[train]"),
        ("[encoder]\nhidden = 0\n", "[encoder]"),
        ("[synth]\ntrain_fraction = 0.9\n", "[synth]"),
        ("[text]\ncell = lstm\n", "reserved"),
        ("[run]\nseed = 1\nseed = 2\n", "duplicate"),
    ] {
        let cfg = write_config(dir.path(), "bad.ini", text);
        let o = slu(&[&"info", &"--config", &cfg]);
        assert_eq!(o.status.code(), Some(3), "{text}");
        let err = stderr(&o);
        assert!(err.starts_with("error: config: "), "{err}");
        assert!(err.contains(needle), "{err}");
        assert_eq!(err.lines().count(), 1);
    }
    let o = Command::new(env!("CARGO_BIN_EXE_slu"))
        .args(["info"])
        .env("SLU_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_round_trips_through_ini() {
    let cfg = RunConfig::parse(TOY).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.encoder.hidden, 8);
    assert_eq!(cfg.n_classes(), 2);
    assert_eq!(RunConfig::parse(&cfg.to_ini()).unwrap(), cfg);
    let d = RunConfig::default();
    assert_eq!(RunConfig::parse(&d.to_ini()).unwrap(), d);
    assert_eq!(RunConfig::parse("# only a comment\n; another\n\n").unwrap(), d);
}

#[test]
fn info_prints_counts_and_config() {
    let o = slu(&[&"info"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("total_params=")));
    assert!(out.contains("[encoder]"));
}

#[test]
fn missing_inputs_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = slu(&[&"featurize", &"--corpus", &dir.path().join("nowhere"), &"--out", &dir.path().join("f")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: io: "));
}

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "toy.ini", TOY);
    let corpus = d.join("corpus");
    let feats = d.join("feats");
    let model = d.join("model");
    let ok = |o: Output| {
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        stdout(&o)
    };

    ok(slu(&[&"synth", &"--config", &cfg, &"--out", &corpus]));
    let again = slu(&[&"synth", &"--config", &cfg, &"--out", &corpus]);
    assert_eq!(again.status.code(), Some(3));
    assert!(stderr(&again).starts_with("error: exists: "));

    ok(slu(&[&"featurize", &"--config", &cfg, &"--corpus", &corpus, &"--out", &feats]));
    assert_eq!(slu(&[&"featurize", &"--config", &cfg, &"--corpus", &corpus, &"--out", &feats]).status.code(), Some(3));
    ok(slu(&[&"featurize", &"--config", &cfg, &"--corpus", &corpus, &"--out", &feats, &"--force"]));

    ok(slu(&[&"train", &"--config", &cfg, &"--corpus", &corpus, &"--features", &feats, &"--out", &model]));
    assert!(model.join("best.ckpt").exists() && model.join("train.log").exists());
    assert_eq!(
        RunConfig::parse(&std::fs::read_to_string(model.join("config.ini")).unwrap()).unwrap(),
        RunConfig::parse(TOY).unwrap()
    );

    let report = d.join("report");
    let eval = ok(slu(&[
        &"eval", &"--config", &cfg, &"--corpus", &corpus, &"--features", &feats, &"--model-dir", &model, &"--report",
        &report,
    ]));
    assert!(eval.starts_with("accuracy=1.000 rtf="), "{eval}");
    assert!(std::fs::read_to_string(report.join("report.txt")).unwrap().contains("accuracy=1.000000"));
    assert!(report.join("confusion.csv").exists() && report.join("utterances.csv").exists());

    let bad = write_config(d, "three.ini", &TOY.replace("target = domain", "target = domain\nn_classes = 3"));
    let o = slu(&[&"eval", &"--config", &bad, &"--corpus", &corpus, &"--features", &feats, &"--model-dir", &model]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error: mismatch: "), "{}", stderr(&o));
    assert!(stderr(&o).contains("3"));

    let manifest = slu::corpus::Manifest::read(&corpus.join("manifest.jsonl")).unwrap();
    let id = &manifest.records[0].id;
    let prefix = d.join("sal").join("utt");
    ok(slu(&[
        &"saliency", &"--config", &cfg, &"--features", &feats, &"--model-dir", &model, &"--id", id, &"--out", &prefix,
    ]));
    assert!(d.join("sal/utt.saliency.pgm").exists());
    let o = slu(&[
        &"saliency", &"--config", &cfg, &"--features", &feats, &"--model-dir", &model, &"--id", id, &"--out", &prefix,
        &"--target", &"5",
    ]);
    assert_eq!(o.status.code(), Some(3));

    let info = ok(slu(&[&"info", &"--config", &cfg, &"--model-dir", &model]));
    let total = info.lines().find_map(|l| l.strip_prefix("total_params=")).unwrap();
    let ck = info.lines().find_map(|l| l.strip_prefix("checkpoint_params=")).unwrap();
    assert_eq!(total, ck);
}

#[test]
fn augment_and_text_stages() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "toy.ini", &format!("{TOY}\n[augment]\ncopies = 1\nsynthetic_rirs = 2\nsynthetic_noises = 2\n"));
    let corpus = d.join("corpus");
    let noisy = d.join("noisy");
    assert_eq!(slu(&[&"synth", &"--config", &cfg, &"--out", &corpus]).status.code(), Some(0));
    let o = slu(&[&"augment", &"--config", &cfg, &"--corpus", &corpus, &"--out", &noisy]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "records=20");
    let m = slu::corpus::Manifest::read(&noisy.join("manifest.jsonl")).unwrap();
    assert!(m.records.iter().all(|r| r.snr_db.is_some() && r.source_id.is_some()));

    let model = d.join("text");
    let o = slu(&[&"train", &"--config", &cfg, &"--corpus", &corpus, &"--out", &model, &"--model", &"text"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(model.join("vocab.txt").exists());
    let o = slu(&[&"eval", &"--config", &cfg, &"--corpus", &corpus, &"--model-dir", &model]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("accuracy=1.000"), "{}", stdout(&o));
}
