//! Command-line surface: augment-labels, train, evaluate, report, and
//! sample-episode. Every command resolves flags over config file over
//! defaults and persists the resolved snapshot so runs can be replayed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use proto_slwla::checkpoint::Checkpoint;
use proto_slwla::config::{ConfigBuilder, RunConfig};
use proto_slwla::corpus::{
    load_corpus, load_split_file, save_split_file, split_aspects, split_map, Corpus, SplitName,
};
use proto_slwla::encoder::{create_encoder, EmbeddingCache, Encoder};
use proto_slwla::episode::{episode_stream, sample_episode};
use proto_slwla::error::{Error, Result};
use proto_slwla::results::{append_record, load_records, render_table, ResultRecord};
use proto_slwla::sampling::{derive_seed, seeded_rng};
use proto_slwla::train::{evaluate_episodes, train, EpisodeEmbedder, Scenario};
use proto_slwla::variant::create_variant;
use proto_slwla::{augment, AugmentedLabelSet};

/// Environment variable naming the on-disk embedding cache directory.
const CACHE_DIR_ENV: &str = "PROTO_SLWLA_CACHE_DIR";

#[derive(Parser)]
#[command(
    name = "proto-slwla",
    version,
    about = "Few-shot multi-label aspect category detection with sentence-level \
             weighting and label augmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine label-related words with the masked prompt template and write
    /// the augmented-label file.
    AugmentLabels(AugmentArgs),
    /// Train a model variant; writes checkpoint, per-epoch log, and the
    /// resolved config snapshot.
    Train(TrainArgs),
    /// Evaluate a checkpoint on fixed-seed episodes and append to the
    /// results store.
    Evaluate(EvaluateArgs),
    /// Render the results store as a scenario-by-variant table.
    Report(ReportArgs),
    /// Sample one episode and print it.
    SampleEpisode(SampleArgs),
}

#[derive(Args)]
struct CommonConfig {
    /// Flat key=value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus file (JSONL records {"id", "text", "aspects"}).
    #[arg(long)]
    data: Option<String>,
    /// Split file (JSON {"train": [...], "valid": [...], "test": [...]}).
    #[arg(long)]
    splits: Option<String>,
    /// Encoder name, e.g. "mock:7".
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    embed_dim: Option<String>,
    #[arg(long)]
    max_len: Option<String>,
}

impl CommonConfig {
    fn overrides(&self) -> Vec<(&'static str, Option<&String>)> {
        vec![
            ("corpus", self.data.as_ref()),
            ("splits", self.splits.as_ref()),
            ("encoder", self.encoder.as_ref()),
            ("seed", self.seed.as_ref()),
            ("embed_dim", self.embed_dim.as_ref()),
            ("max_len", self.max_len.as_ref()),
        ]
    }
}

#[derive(Args)]
struct AugmentArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Words to append per label.
    #[arg(long)]
    m: Option<String>,
    /// Sentences sampled per class for candidate mining.
    #[arg(long)]
    sentences_per_class: Option<String>,
    /// Restrict to one split ("train", "valid", "test") or "all".
    #[arg(long, default_value = "all")]
    split: String,
    /// Output path for the augmented-label file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Augmented-label file (required by slw-las and slwla).
    #[arg(long)]
    labels: Option<String>,
    /// Model variant: proto, slw, slw-las, or slwla.
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    queries_per_class: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    e_m: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    episodes_per_epoch: Option<String>,
    #[arg(long)]
    val_episodes: Option<String>,
    #[arg(long)]
    test_episodes: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    auc_mode: Option<String>,
    #[arg(long)]
    split_counts: Option<String>,
    #[arg(long)]
    fine_tune_encoder: bool,
    #[arg(long)]
    out_dir: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus override; defaults to the checkpoint's corpus.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    splits: Option<String>,
    #[arg(long)]
    labels: Option<String>,
    /// Episode count override (defaults to the checkpoint's test_episodes).
    #[arg(long)]
    episodes: Option<String>,
    /// Split to evaluate on.
    #[arg(long, default_value = "test")]
    split: String,
    /// Results directory; defaults to the checkpoint's directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding results.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
    /// "text" or "json".
    #[arg(long, default_value = "text")]
    format: String,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    common: CommonConfig,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    queries_per_class: Option<String>,
    /// Split to sample from.
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long)]
    split_counts: Option<String>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::AugmentLabels(args) => cmd_augment_labels(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Report(args) => cmd_report(args),
        Command::SampleEpisode(args) => cmd_sample_episode(args),
    }
}

fn build_config(
    config: &Option<PathBuf>,
    overrides: Vec<(&'static str, Option<&String>)>,
) -> Result<ConfigBuilder> {
    let mut builder = ConfigBuilder::defaults();
    if let Some(path) = config {
        if !path.exists() {
            return Err(Error::config(format!(
                "config file not found: {}",
                path.display()
            )));
        }
        builder.load_file(path)?;
    }
    for (key, value) in overrides {
        if let Some(v) = value {
            builder.set(key, v)?;
        }
    }
    Ok(builder)
}

fn load_corpus_checked(cfg: &RunConfig) -> Result<Corpus> {
    let path = cfg.require_corpus()?;
    if !path.exists() {
        return Err(Error::config(format!(
            "corpus file not found: {}",
            path.display()
        )));
    }
    load_corpus(path)
}

/// Loads the split file when it exists; otherwise generates a deterministic
/// split of the configured sizes and persists it (next to the corpus when no
/// path was configured).
fn resolve_splits(corpus: &mut Corpus, cfg: &RunConfig) -> Result<PathBuf> {
    let path = match &cfg.splits {
        Some(p) => p.clone(),
        None => {
            let corpus_path = cfg.require_corpus()?;
            let mut os = corpus_path.as_os_str().to_owned();
            os.push(".splits.json");
            PathBuf::from(os)
        }
    };
    if path.exists() {
        let map = load_split_file(&path)?;
        corpus.apply_splits(&map)?;
    } else {
        let assigned = split_aspects(
            corpus.catalog(),
            cfg.split_counts,
            derive_seed(cfg.training.seed, "split", 0),
        )?;
        save_split_file(&path, &assigned)?;
        corpus.apply_splits(&split_map(&assigned))?;
    }
    Ok(path)
}

fn make_encoder(cfg: &RunConfig) -> Result<Box<dyn Encoder>> {
    create_encoder(&cfg.encoder, cfg.training.embed_dim, cfg.training.max_len)
}

fn make_cache(encoder: &dyn Encoder) -> Result<EmbeddingCache> {
    match std::env::var_os(CACHE_DIR_ENV) {
        Some(dir) => EmbeddingCache::with_disk(Path::new(&dir), &encoder.id()),
        None => Ok(EmbeddingCache::new()),
    }
}

fn cmd_augment_labels(args: AugmentArgs) -> Result<()> {
    let mut overrides = args.common.overrides();
    overrides.push(("m", args.m.as_ref()));
    overrides.push(("sentences_per_class", args.sentences_per_class.as_ref()));
    let builder = build_config(&args.common.config, overrides)?;
    let cfg = builder.build()?;

    let mut corpus = load_corpus_checked(&cfg)?;
    let aspects: Vec<String> = if args.split == "all" {
        if cfg.splits.is_some() {
            resolve_splits(&mut corpus, &cfg)?;
        }
        corpus.catalog().aspects().map(str::to_string).collect()
    } else {
        let split = SplitName::parse(&args.split)?;
        resolve_splits(&mut corpus, &cfg)?;
        corpus.catalog().split_members(split)
    };
    if aspects.is_empty() {
        return Err(Error::config("no aspects selected for augmentation"));
    }

    let encoder = make_encoder(&cfg)?;
    let set = augment::augment_aspects(
        &corpus,
        &aspects,
        cfg.training.m,
        cfg.sentences_per_class,
        encoder.as_ref(),
        cfg.training.seed,
    )?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    set.save(&args.out)?;
    let mut snapshot_path = args.out.as_os_str().to_owned();
    snapshot_path.push(".snapshot");
    builder.write_snapshot(Path::new(&snapshot_path))?;

    println!(
        "augmented {} labels with m={} (encoder {}, seed {})",
        set.labels.len(),
        set.m,
        set.encoder_id,
        set.seed
    );
    println!("{:<40} predicted words", "label name");
    for label in set.labels.values() {
        println!("{:<40} {}", label.name, label.words.join(", "));
    }
    println!("written to {}", args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut overrides = args.common.overrides();
    overrides.push(("labels", args.labels.as_ref()));
    overrides.push(("ablation", args.ablation.as_ref()));
    overrides.push(("n", args.n.as_ref()));
    overrides.push(("k", args.k.as_ref()));
    overrides.push(("queries_per_class", args.queries_per_class.as_ref()));
    overrides.push(("tau", args.tau.as_ref()));
    overrides.push(("e_m", args.e_m.as_ref()));
    overrides.push(("learning_rate", args.learning_rate.as_ref()));
    overrides.push(("batch_size", args.batch_size.as_ref()));
    overrides.push(("episodes_per_epoch", args.episodes_per_epoch.as_ref()));
    overrides.push(("val_episodes", args.val_episodes.as_ref()));
    overrides.push(("test_episodes", args.test_episodes.as_ref()));
    overrides.push(("patience", args.patience.as_ref()));
    overrides.push(("max_epochs", args.max_epochs.as_ref()));
    overrides.push(("optimizer", args.optimizer.as_ref()));
    overrides.push(("auc_mode", args.auc_mode.as_ref()));
    overrides.push(("split_counts", args.split_counts.as_ref()));
    overrides.push(("out_dir", args.out_dir.as_ref()));
    let fine_tune = args.fine_tune_encoder.then(|| "true".to_string());
    overrides.push(("fine_tune_encoder", fine_tune.as_ref()));

    let builder = build_config(&args.common.config, overrides)?;
    let cfg = builder.build()?;
    let variant = create_variant(&cfg.ablation)?;

    // Label-file invariants are checked before any compute; variants that
    // ignore labels never read the file.
    let labels: Option<AugmentedLabelSet> = if variant.uses_labels() {
        let path = cfg.labels.as_ref().ok_or_else(|| {
            Error::config(format!(
                "ablation '{}' needs --labels <augmented-label file>",
                cfg.ablation
            ))
        })?;
        if !path.exists() {
            return Err(Error::config(format!(
                "label file not found: {}",
                path.display()
            )));
        }
        Some(AugmentedLabelSet::load(path)?)
    } else {
        None
    };
    variant.validate_labels(labels.as_ref())?;

    let mut corpus = load_corpus_checked(&cfg)?;
    resolve_splits(&mut corpus, &cfg)?;
    let encoder = make_encoder(&cfg)?;
    let cache = make_cache(encoder.as_ref())?;

    fs::create_dir_all(&cfg.out_dir)?;
    builder.write_snapshot(&cfg.out_dir.join("config.snapshot"))?;

    let outcome = match train(
        &corpus,
        encoder.as_ref(),
        labels.as_ref(),
        variant.as_ref(),
        &cfg.training,
        cache,
    ) {
        Ok(outcome) => outcome,
        Err(e @ Error::Divergence(_)) => {
            let dump = cfg.out_dir.join("divergence.txt");
            let _ = fs::write(&dump, format!("{e}\n\n{}", builder.snapshot()));
            eprintln!("diagnostic state dumped to {}", dump.display());
            return Err(e);
        }
        Err(e) => return Err(e),
    };

    let mut log_file = fs::File::create(cfg.out_dir.join("train_log.jsonl"))?;
    for record in &outcome.log {
        writeln!(
            log_file,
            "{}",
            serde_json::to_string(record).expect("record serializes")
        )?;
    }

    let checkpoint = Checkpoint {
        encoder_id: encoder.id(),
        ablation: cfg.ablation.clone(),
        config: builder.values().clone(),
        best_epoch: outcome.best_epoch,
        best_val_auc: outcome.best_val_auc,
        epochs_run: outcome.epochs_run,
        params: outcome.params,
    };
    let ckpt_path = cfg.out_dir.join("checkpoint.pslw");
    checkpoint.save(&ckpt_path)?;

    for record in &outcome.log {
        println!(
            "epoch {:>3}: train_loss {:.6} val_auc {:.4} val_f1 {:.2}",
            record.epoch, record.mean_train_loss, record.val_auc, record.val_macro_f1
        );
    }
    println!(
        "best epoch {} (val AUC {:.4}); checkpoint at {}",
        outcome.best_epoch,
        outcome.best_val_auc,
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    if !args.checkpoint.exists() {
        return Err(Error::config(format!(
            "checkpoint not found: {}",
            args.checkpoint.display()
        )));
    }
    let checkpoint = Checkpoint::load(&args.checkpoint)?;

    // The checkpoint's resolved config drives evaluation; explicit flags
    // override paths and episode count.
    let mut builder = ConfigBuilder::defaults();
    for (key, value) in &checkpoint.config {
        builder.set(key, value)?;
    }
    for (key, value) in [
        ("corpus", args.data.as_ref()),
        ("splits", args.splits.as_ref()),
        ("labels", args.labels.as_ref()),
        ("test_episodes", args.episodes.as_ref()),
    ] {
        if let Some(v) = value {
            builder.set(key, v)?;
        }
    }
    let cfg = builder.build()?;
    if checkpoint.params.dim() != cfg.training.embed_dim
        || checkpoint.params.repeat() != cfg.training.repeat
    {
        return Err(Error::Compatibility(format!(
            "checkpoint tensors are d={}, e_M={} but config says embed_dim={}, e_m={}",
            checkpoint.params.dim(),
            checkpoint.params.repeat(),
            cfg.training.embed_dim,
            cfg.training.repeat
        )));
    }
    let variant = create_variant(&checkpoint.ablation)?;
    let labels = if variant.uses_labels() {
        let path = cfg.labels.as_ref().ok_or_else(|| {
            Error::config(format!(
                "ablation '{}' needs a label file (key 'labels')",
                checkpoint.ablation
            ))
        })?;
        Some(AugmentedLabelSet::load(path)?)
    } else {
        None
    };
    variant.validate_labels(labels.as_ref())?;

    let mut corpus = load_corpus_checked(&cfg)?;
    resolve_splits(&mut corpus, &cfg)?;
    let split = SplitName::parse(&args.split)?;
    let encoder = make_encoder(&cfg)?;
    if encoder.id() != checkpoint.encoder_id {
        return Err(Error::Compatibility(format!(
            "checkpoint was trained with encoder '{}', config selects '{}'",
            checkpoint.encoder_id,
            encoder.id()
        )));
    }
    let cache = make_cache(encoder.as_ref())?;

    let t = &cfg.training;
    let episodes = episode_stream(
        &corpus,
        split,
        t.way,
        t.shot,
        t.queries_per_class,
        t.test_episodes,
        derive_seed(t.seed, "test", 0),
    )?;
    let mut embedder = EpisodeEmbedder::new(
        &corpus,
        encoder.as_ref(),
        labels.as_ref(),
        variant.forward_options().label_guidance,
        cache,
    );
    let scenario = Scenario {
        way: t.way,
        shot: t.shot,
        m: labels.as_ref().map(|l| l.m).unwrap_or(0),
        ablation: checkpoint.ablation.clone(),
    };
    let report = evaluate_episodes(
        &episodes,
        &mut embedder,
        &checkpoint.params,
        &variant.forward_options(),
        t.tau,
        t.auc_mode,
        &scenario,
    )?;

    let out_dir = args
        .out_dir
        .unwrap_or_else(|| args.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    let record = ResultRecord::from_report(&report, &args.checkpoint.display().to_string());
    append_record(&out_dir, &record)?;
    builder.write_snapshot(&out_dir.join(format!(
        "evaluate-{}-{}w{}s.snapshot",
        record.ablation, record.n, record.k
    )))?;
    println!(
        "{} {}w{}s m={} split={}: AUC {:.4}, macro-F1 {:.2} ({} episodes, {} skipped)",
        record.ablation,
        record.n,
        record.k,
        record.m,
        split,
        record.auc,
        record.macro_f1,
        record.episodes,
        record.skipped
    );
    println!("record appended to {}", out_dir.join("results.jsonl").display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let records = load_records(&args.out_dir)?;
    match args.format.as_str() {
        "text" => print!("{}", render_table(&records)?),
        "json" => println!(
            "{}",
            serde_json::to_string_pretty(&records).expect("records serialize")
        ),
        other => return Err(Error::config(format!("unknown format '{other}'"))),
    }
    Ok(())
}

fn cmd_sample_episode(args: SampleArgs) -> Result<()> {
    let mut overrides = args.common.overrides();
    overrides.push(("n", args.n.as_ref()));
    overrides.push(("k", args.k.as_ref()));
    overrides.push(("queries_per_class", args.queries_per_class.as_ref()));
    overrides.push(("split_counts", args.split_counts.as_ref()));
    let builder = build_config(&args.common.config, overrides)?;
    let cfg = builder.build()?;

    let mut corpus = load_corpus_checked(&cfg)?;
    resolve_splits(&mut corpus, &cfg)?;
    let split = SplitName::parse(&args.split)?;
    let t = &cfg.training;
    let mut rng = seeded_rng(t.seed, "sample-episode");
    let episode = sample_episode(&corpus, split, t.way, t.shot, t.queries_per_class, &mut rng)?;

    println!(
        "{}-way {}-shot episode (split: {}, seed: {})",
        episode.way(),
        episode.shot(),
        split,
        t.seed
    );
    println!("support:");
    let letters: Vec<char> = ('A'..='Z').collect();
    for (i, class) in episode.support.iter().enumerate() {
        println!("  ({}) {}", letters[i % 26], class.aspect);
        for &idx in &class.sentences {
            let s = corpus.sentence(idx);
            println!("      [{}] {}", s.id, s.text);
        }
    }
    println!("queries:");
    for q in &episode.queries {
        let s = corpus.sentence(q.sentence);
        let bits: Vec<&str> = q.labels.iter().map(|b| if *b { "1" } else { "0" }).collect();
        let named: Vec<String> = q
            .labels
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| format!("({})", letters[i % 26]))
            .collect();
        println!("  [{}] ({}) {} {}", s.id, bits.join(","), named.join(" "), s.text);
    }
    Ok(())
}
