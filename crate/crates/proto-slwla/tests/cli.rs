//! End-to-end tests of the command-line surface, run against the binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proto_slwla::synth::SynthSpec;
use proto_slwla::AugmentedLabelSet;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_proto-slwla"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed ({}):\n{}",
        args,
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str], expected_code: i32) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert_eq!(
        out.status.code(),
        Some(expected_code),
        "command {:?}: expected exit {expected_code}, got {:?}\nstderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Writes the small synthetic corpus and returns its path.
fn write_corpus(dir: &Path) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    SynthSpec::small_test_spec().write_jsonl(&path).unwrap();
    path
}

fn base_train_args<'a>(corpus: &'a str, out_dir: &'a str) -> Vec<&'a str> {
    vec![
        "train",
        "--data",
        corpus,
        "--out-dir",
        out_dir,
        "--encoder",
        "mock:3",
        "--embed-dim",
        "8",
        "--max-len",
        "20",
        "--n",
        "2",
        "--k",
        "2",
        "--queries-per-class",
        "2",
        "--episodes-per-epoch",
        "4",
        "--val-episodes",
        "3",
        "--test-episodes",
        "3",
        "--max-epochs",
        "2",
        "--learning-rate",
        "0.1",
        "--split-counts",
        "3,2,2",
        "--seed",
        "5",
    ]
}

#[test]
fn augment_m1_adds_exactly_one_word_per_label() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let out = dir.path().join("labels.json");
    run_ok(&[
        "augment-labels",
        "--data",
        corpus.to_str().unwrap(),
        "--encoder",
        "mock:3",
        "--embed-dim",
        "8",
        "--max-len",
        "20",
        "--m",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    let set = AugmentedLabelSet::load(&out).unwrap();
    assert_eq!(set.m, 1);
    assert_eq!(set.labels.len(), 7);
    for label in set.labels.values() {
        assert_eq!(label.words.len(), 1, "label {} gained {:?}", label.name, label.words);
        assert_eq!(label.combined, format!("{}_{}", label.name, label.words[0]));
    }
}

#[test]
fn augment_m0_keeps_names_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let out = dir.path().join("labels0.json");
    run_ok(&[
        "augment-labels",
        "--data",
        corpus.to_str().unwrap(),
        "--encoder",
        "mock:3",
        "--embed-dim",
        "8",
        "--max-len",
        "20",
        "--m",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    let set = AugmentedLabelSet::load(&out).unwrap();
    assert_eq!(set.m, 0);
    for label in set.labels.values() {
        assert_eq!(label.combined, label.name);
    }
}

#[test]
fn train_proto_completes_without_label_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let out_dir = dir.path().join("run-proto");
    let mut args = base_train_args(corpus.to_str().unwrap(), out_dir.to_str().unwrap());
    args.extend(["--ablation", "proto"]);
    run_ok(&args);
    assert!(out_dir.join("checkpoint.pslw").exists());
    assert!(out_dir.join("config.snapshot").exists());
    assert!(out_dir.join("train_log.jsonl").exists());
}

#[test]
fn train_slwla_with_m0_labels_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let labels = dir.path().join("labels0.json");
    run_ok(&[
        "augment-labels",
        "--data",
        corpus.to_str().unwrap(),
        "--encoder",
        "mock:3",
        "--embed-dim",
        "8",
        "--max-len",
        "20",
        "--m",
        "0",
        "--out",
        labels.to_str().unwrap(),
    ]);
    let out_dir = dir.path().join("run-slwla");
    let mut args = base_train_args(corpus.to_str().unwrap(), out_dir.to_str().unwrap());
    let labels_str = labels.to_str().unwrap().to_string();
    args.extend(["--ablation", "slwla", "--labels", &labels_str]);
    let out = run_err(&args, 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("m >= 1"), "stderr: {stderr}");
    // Config error fires before any compute: no checkpoint was written.
    assert!(!out_dir.join("checkpoint.pslw").exists());
}

#[test]
fn identical_seeds_reproduce_identical_logs_and_snapshot_replays() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let corpus_str = corpus.to_str().unwrap();

    let run_a = dir.path().join("a");
    let run_b = dir.path().join("b");
    for out_dir in [&run_a, &run_b] {
        let mut args = base_train_args(corpus_str, out_dir.to_str().unwrap());
        args.extend(["--ablation", "slw"]);
        run_ok(&args);
    }
    let log_a = fs::read(run_a.join("train_log.jsonl")).unwrap();
    let log_b = fs::read(run_b.join("train_log.jsonl")).unwrap();
    assert_eq!(log_a, log_b, "same seeds produced different logs");
    // Checkpoints agree on everything except the embedded out_dir.
    let ckpt_a = proto_slwla::Checkpoint::load(&run_a.join("checkpoint.pslw")).unwrap();
    let ckpt_b = proto_slwla::Checkpoint::load(&run_b.join("checkpoint.pslw")).unwrap();
    assert_eq!(ckpt_a.params, ckpt_b.params);
    assert_eq!(ckpt_a.best_epoch, ckpt_b.best_epoch);
    assert_eq!(ckpt_a.best_val_auc, ckpt_b.best_val_auc);

    // Replaying from the persisted snapshot reproduces the run bit-for-bit.
    let run_c = dir.path().join("c");
    run_ok(&[
        "train",
        "--config",
        run_a.join("config.snapshot").to_str().unwrap(),
        "--out-dir",
        run_c.to_str().unwrap(),
    ]);
    let log_c = fs::read(run_c.join("train_log.jsonl")).unwrap();
    assert_eq!(log_a, log_c, "snapshot replay diverged");
}

#[test]
fn evaluate_appends_comparable_records_and_report_renders() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let corpus_str = corpus.to_str().unwrap();
    let results_dir = dir.path().join("results");

    for ablation in ["proto", "slw"] {
        let out_dir = dir.path().join(format!("run-{ablation}"));
        let mut args = base_train_args(corpus_str, out_dir.to_str().unwrap());
        args.extend(["--ablation", ablation]);
        run_ok(&args);
        run_ok(&[
            "evaluate",
            "--checkpoint",
            out_dir.join("checkpoint.pslw").to_str().unwrap(),
            "--out-dir",
            results_dir.to_str().unwrap(),
        ]);
    }

    let content = fs::read_to_string(results_dir.join("results.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = content
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 2);
    for record in &records {
        assert_eq!(record["episodes"], 3);
        assert_eq!(record["n"], 2);
        assert_eq!(record["k"], 2);
        assert_eq!(record["scenario"], "2w2s");
    }
    assert_eq!(records[0]["ablation"], "proto");
    assert_eq!(records[1]["ablation"], "slw");

    let out = run_ok(&["report", "--out-dir", results_dir.to_str().unwrap()]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("2-way 2-shot"));
    assert!(table.contains("proto"));
    assert!(table.contains("slw"));

    let out = run_ok(&[
        "report",
        "--out-dir",
        results_dir.to_str().unwrap(),
        "--format",
        "json",
    ]);
    let parsed: Vec<serde_json::Value> =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(parsed.len(), 2);
}

#[test]
fn corrupted_checkpoint_is_compatibility_error_with_no_record() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let out_dir = dir.path().join("run");
    let mut args = base_train_args(corpus.to_str().unwrap(), out_dir.to_str().unwrap());
    args.extend(["--ablation", "proto"]);
    run_ok(&args);

    let good = out_dir.join("checkpoint.pslw");
    let bad = dir.path().join("broken.pslw");
    let mut bytes = fs::read(&good).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&bad, &bytes).unwrap();

    let results_dir = dir.path().join("results");
    run_err(
        &[
            "evaluate",
            "--checkpoint",
            bad.to_str().unwrap(),
            "--out-dir",
            results_dir.to_str().unwrap(),
        ],
        2,
    );
    assert!(!results_dir.join("results.jsonl").exists());
}

#[test]
fn report_on_empty_store_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    run_err(&["report", "--out-dir", dir.path().to_str().unwrap()], 1);
}

#[test]
fn sample_episode_is_deterministic_and_structured() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let args = [
        "sample-episode",
        "--data",
        corpus.to_str().unwrap(),
        "--n",
        "2",
        "--k",
        "2",
        "--queries-per-class",
        "1",
        "--split-counts",
        "3,2,2",
        "--seed",
        "11",
    ];
    let first = run_ok(&args);
    let second = run_ok(&args);
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8_lossy(&first.stdout);
    assert!(text.contains("2-way 2-shot episode"));
    assert!(text.contains("support:"));
    assert!(text.contains("queries:"));
    assert!(text.contains("(A)"));
    assert!(text.contains("(B)"));
}

#[test]
fn missing_corpus_is_usage_error_and_unknown_encoder_is_environment_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.json");
    run_err(
        &[
            "augment-labels",
            "--data",
            "/nonexistent/corpus.jsonl",
            "--m",
            "1",
            "--out",
            out.to_str().unwrap(),
        ],
        1,
    );

    let corpus = write_corpus(dir.path());
    run_err(
        &[
            "augment-labels",
            "--data",
            corpus.to_str().unwrap(),
            "--encoder",
            "bert-base",
            "--m",
            "1",
            "--out",
            out.to_str().unwrap(),
        ],
        3,
    );
}

#[test]
fn cache_env_var_persists_embeddings_to_disk() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let cache_dir = dir.path().join("emb-cache");
    let out_dir = dir.path().join("run");
    let mut args = base_train_args(corpus.to_str().unwrap(), out_dir.to_str().unwrap());
    args.extend(["--ablation", "proto"]);
    let out = bin()
        .args(&args)
        .env("PROTO_SLWLA_CACHE_DIR", &cache_dir)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let entries: Vec<_> = fs::read_dir(&cache_dir)
        .unwrap()
        .flat_map(|sub| fs::read_dir(sub.unwrap().path()).unwrap())
        .collect();
    assert!(!entries.is_empty(), "no cache entries written");
}

#[test]
fn commands_do_not_mutate_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let before = fs::read(&corpus).unwrap();

    let labels = dir.path().join("labels.json");
    run_ok(&[
        "augment-labels",
        "--data",
        corpus.to_str().unwrap(),
        "--encoder",
        "mock:3",
        "--embed-dim",
        "8",
        "--max-len",
        "20",
        "--m",
        "1",
        "--out",
        labels.to_str().unwrap(),
    ]);
    let labels_before = fs::read(&labels).unwrap();

    let out_dir = dir.path().join("run");
    let mut args = base_train_args(corpus.to_str().unwrap(), out_dir.to_str().unwrap());
    let labels_str = labels.to_str().unwrap().to_string();
    args.extend(["--ablation", "slwla", "--labels", &labels_str]);
    run_ok(&args);

    assert_eq!(before, fs::read(&corpus).unwrap());
    assert_eq!(labels_before, fs::read(&labels).unwrap());
}
