//! Episodic training: gradient descent over resampled meta-tasks, fixed-seed
//! validation, early stopping on validation AUC, and evaluation.

use std::collections::BTreeMap;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentedLabelSet;
use crate::corpus::{Corpus, SplitName};
use crate::encoder::{EmbeddingCache, Encoder};
use crate::episode::{episode_stream, Episode};
use crate::error::{Error, Result};
use crate::forward::{forward_backward, forward_episode, EpisodeInput, ForwardOptions, ClassInput};
use crate::metrics::{episode_auc, macro_f1, AucMode, MetricsReport};
use crate::params::{accumulate_grads, scale_grads, ModelParams, ParamGrads};
use crate::predict::predict_forward;
use crate::sampling::derive_seed;
use crate::variant::Variant;

/// First-order optimizers selectable from config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<OptimizerKind> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::config(format!("unknown optimizer '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Training hyperparameters. Defaults encode the reference protocol:
/// tau 0.3, e_M 4, L 50, d 768, lr 1e-5, 5 queries per class, batch 4/2 for
/// 5/10-way, 800 train / 600 val / 600 test episodes, patience 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    pub m: usize,
    pub tau: f64,
    /// Repeat count e_M for the dynamic attention maps.
    pub repeat: usize,
    pub embed_dim: usize,
    pub max_len: usize,
    pub learning_rate: f64,
    /// Episodes per parameter update; `None` derives 4 (way < 10) or 2.
    pub batch_size: Option<usize>,
    pub episodes_per_epoch: usize,
    pub val_episodes: usize,
    pub test_episodes: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub auc_mode: AucMode,
    pub fine_tune_encoder: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            way: 5,
            shot: 5,
            queries_per_class: 5,
            m: 1,
            tau: 0.3,
            repeat: 4,
            embed_dim: 768,
            max_len: 50,
            learning_rate: 1e-5,
            batch_size: None,
            episodes_per_epoch: 800,
            val_episodes: 600,
            test_episodes: 600,
            patience: 3,
            max_epochs: 50,
            seed: 17,
            optimizer: OptimizerKind::Sgd,
            auc_mode: AucMode::Pooled,
            fine_tune_encoder: false,
        }
    }
}

impl TrainingConfig {
    pub fn effective_batch_size(&self) -> usize {
        self.batch_size.unwrap_or(if self.way >= 10 { 2 } else { 4 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.way == 0
            || self.shot == 0
            || self.queries_per_class == 0
            || self.episodes_per_epoch == 0
            || self.val_episodes == 0
            || self.test_episodes == 0
            || self.patience == 0
            || self.max_epochs == 0
            || self.repeat == 0
            || self.embed_dim == 0
            || self.max_len == 0
        {
            return Err(Error::config("all counts must be positive"));
        }
        if !(0.0 < self.tau && self.tau < 1.0) {
            return Err(Error::config(format!("tau {} outside (0, 1)", self.tau)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive and finite"));
        }
        Ok(())
    }
}

/// Early stopping on a metric that should increase: stop once `patience`
/// consecutive epochs fail to improve on the best value.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopVerdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopVerdict {
        match self.best {
            None => {
                self.best = Some((epoch, value));
                StopVerdict::Improved
            }
            Some((_, best_value)) if value > best_value => {
                self.best = Some((epoch, value));
                StopVerdict::Improved
            }
            Some((best_epoch, _)) if epoch - best_epoch >= self.patience => StopVerdict::Stop,
            _ => StopVerdict::Continue,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Optimizer state; Adam keeps first/second moment accumulators.
pub struct Optimizer {
    kind: OptimizerKind,
    steps: usize,
    first: ParamGrads,
    second: ParamGrads,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ModelParams) -> Self {
        Optimizer {
            kind,
            steps: 0,
            first: params.zero_grads(),
            second: params.zero_grads(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads, lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (name, tensor) in params.tensors_mut() {
                    let g = &grads[name];
                    tensor.zip_mut_with(g, |t, gv| *t -= lr * gv);
                }
            }
            OptimizerKind::Adam => {
                const BETA1: f64 = 0.9;
                const BETA2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.steps += 1;
                let t = self.steps as i32;
                for (name, tensor) in params.tensors_mut() {
                    let g = &grads[name];
                    let m = self.first.get_mut(name).expect("aligned");
                    let v = self.second.get_mut(name).expect("aligned");
                    m.zip_mut_with(g, |mv, gv| *mv = BETA1 * *mv + (1.0 - BETA1) * gv);
                    v.zip_mut_with(g, |vv, gv| *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv);
                    let bias1 = 1.0 - BETA1.powi(t);
                    let bias2 = 1.0 - BETA2.powi(t);
                    for ((tv, mv), vv) in tensor.iter_mut().zip(m.iter()).zip(v.iter()) {
                        let m_hat = mv / bias1;
                        let v_hat = vv / bias2;
                        *tv -= lr * m_hat / (v_hat.sqrt() + EPS);
                    }
                }
            }
        }
    }
}

/// Embeds episodes through the shared cache, attaching label embeddings when
/// the variant uses them.
pub struct EpisodeEmbedder<'a> {
    corpus: &'a Corpus,
    encoder: &'a dyn Encoder,
    labels: Option<&'a AugmentedLabelSet>,
    use_labels: bool,
    cache: EmbeddingCache,
    label_vecs: BTreeMap<String, Array1<f64>>,
}

impl<'a> EpisodeEmbedder<'a> {
    pub fn new(
        corpus: &'a Corpus,
        encoder: &'a dyn Encoder,
        labels: Option<&'a AugmentedLabelSet>,
        use_labels: bool,
        cache: EmbeddingCache,
    ) -> Self {
        EpisodeEmbedder {
            corpus,
            encoder,
            labels,
            use_labels,
            cache,
            label_vecs: BTreeMap::new(),
        }
    }

    fn label_vec(&mut self, aspect: &str) -> Result<Array1<f64>> {
        if let Some(v) = self.label_vecs.get(aspect) {
            return Ok(v.clone());
        }
        let set = self.labels.ok_or_else(|| {
            Error::config("variant needs label embeddings but no label file was given")
        })?;
        let label = set.get(aspect).ok_or_else(|| {
            Error::validation(format!("label file has no entry for aspect '{aspect}'"))
        })?;
        let vec = self.encoder.embed_label_text(&label.combined)?;
        self.label_vecs.insert(aspect.to_string(), vec.clone());
        Ok(vec)
    }

    pub fn embed(&mut self, episode: &Episode) -> Result<EpisodeInput> {
        let mut classes = Vec::with_capacity(episode.support.len());
        for class in &episode.support {
            let mut sentences = Vec::with_capacity(class.sentences.len());
            for &idx in &class.sentences {
                sentences.push(
                    self.cache
                        .embed(self.encoder, &self.corpus.sentence(idx).text)?,
                );
            }
            let label_embedding = if self.use_labels {
                Some(self.label_vec(&class.aspect)?)
            } else {
                None
            };
            classes.push(ClassInput {
                aspect: class.aspect.clone(),
                sentences,
                label_embedding,
            });
        }
        let mut queries = Vec::with_capacity(episode.queries.len());
        let mut gold = Vec::with_capacity(episode.queries.len());
        for q in &episode.queries {
            queries.push(
                self.cache
                    .embed(self.encoder, &self.corpus.sentence(q.sentence).text)?,
            );
            gold.push(q.labels.clone());
        }
        Ok(EpisodeInput {
            classes,
            queries,
            gold,
        })
    }
}

/// Scenario identifiers attached to a metrics report.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub way: usize,
    pub shot: usize,
    pub m: usize,
    pub ablation: String,
}

/// Evaluates episodes: per-episode pooled AUC (skipping degenerate episodes)
/// and per-episode macro-F1, both averaged across episodes.
pub fn evaluate_episodes(
    episodes: &[Episode],
    embedder: &mut EpisodeEmbedder,
    params: &ModelParams,
    opts: &ForwardOptions,
    tau: f64,
    auc_mode: AucMode,
    scenario: &Scenario,
) -> Result<MetricsReport> {
    if episodes.is_empty() {
        return Err(Error::validation("evaluate: no episodes"));
    }
    let mut auc_sum = 0.0;
    let mut auc_count = 0usize;
    let mut skipped = 0usize;
    let mut f1_sum = 0.0;
    for episode in episodes {
        let input = embedder.embed(episode)?;
        let fwd = forward_episode(&input, params, opts)?;
        let pred = predict_forward(&fwd, tau)?;
        let scores: Vec<Vec<f64>> = pred.scores.iter().map(|s| s.to_vec()).collect();
        match episode_auc(&scores, &input.gold, auc_mode) {
            Some(a) => {
                auc_sum += a;
                auc_count += 1;
            }
            None => skipped += 1,
        }
        f1_sum += macro_f1(&pred.decisions, &input.gold)?;
    }
    if auc_count == 0 {
        return Err(Error::validation(
            "evaluate: AUC undefined for every episode",
        ));
    }
    Ok(MetricsReport {
        auc: auc_sum / auc_count as f64,
        macro_f1: 100.0 * f1_sum / episodes.len() as f64,
        episodes: episodes.len(),
        skipped,
        way: scenario.way,
        shot: scenario.shot,
        m: scenario.m,
        ablation: scenario.ablation.clone(),
    })
}

/// One epoch of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub batch_losses: Vec<f64>,
    pub val_auc: f64,
    pub val_macro_f1: f64,
}

/// Result of a training run: best-epoch parameters plus the full log.
#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub epochs_run: usize,
    pub log: Vec<EpochRecord>,
}

/// Trains a variant: per epoch, resample training episodes, batch them,
/// average gradients within each batch, update, then evaluate on the
/// fixed-seed validation episodes. Stops when validation AUC fails to
/// improve for `patience` epochs and returns the best-epoch checkpoint.
pub fn train(
    corpus: &Corpus,
    encoder: &dyn Encoder,
    labels: Option<&AugmentedLabelSet>,
    variant: &dyn Variant,
    cfg: &TrainingConfig,
    cache: EmbeddingCache,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    variant.validate_labels(labels)?;
    if cfg.fine_tune_encoder && !encoder.is_trainable() {
        return Err(Error::config(format!(
            "encoder '{}' is frozen; fine_tune_encoder requires a trainable encoder",
            encoder.id()
        )));
    }
    if encoder.dim() != cfg.embed_dim || encoder.max_len() != cfg.max_len {
        return Err(Error::config(format!(
            "encoder is d={}, L={} but config says embed_dim={}, max_len={}",
            encoder.dim(),
            encoder.max_len(),
            cfg.embed_dim,
            cfg.max_len
        )));
    }

    let opts = variant.forward_options();
    let mut embedder = EpisodeEmbedder::new(corpus, encoder, labels, opts.label_guidance, cache);
    let scenario = Scenario {
        way: cfg.way,
        shot: cfg.shot,
        m: labels.map(|l| l.m).unwrap_or(0),
        ablation: variant.name().to_string(),
    };

    let mut params = ModelParams::init(cfg.embed_dim, cfg.repeat, derive_seed(cfg.seed, "init", 0));
    let mut optimizer = Optimizer::new(cfg.optimizer, &params);
    let mut stopper = EarlyStopper::new(cfg.patience);

    // Validation episodes are fixed per run so early stopping compares like
    // against like.
    let val_episodes = episode_stream(
        corpus,
        SplitName::Valid,
        cfg.way,
        cfg.shot,
        cfg.queries_per_class,
        cfg.val_episodes,
        derive_seed(cfg.seed, "val", 0),
    )?;

    let batch_size = cfg.effective_batch_size();
    let mut log = Vec::new();
    let mut best_params = params.clone();
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let episodes = episode_stream(
            corpus,
            SplitName::Train,
            cfg.way,
            cfg.shot,
            cfg.queries_per_class,
            cfg.episodes_per_epoch,
            derive_seed(cfg.seed, "train-epoch", epoch as u64),
        )?;

        let mut batch_losses = Vec::new();
        for (batch_idx, batch) in episodes.chunks(batch_size).enumerate() {
            let mut grads = params.zero_grads();
            let mut batch_loss = 0.0;
            for episode in batch {
                let input = embedder.embed(episode)?;
                let (fwd, episode_grads) = forward_backward(&input, &params, &opts)?;
                if !fwd.loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite loss {} at epoch {epoch}, batch {batch_idx}; \
                         param norms: {}",
                        fwd.loss,
                        param_norms(&params)
                    )));
                }
                batch_loss += fwd.loss;
                accumulate_grads(&mut grads, &episode_grads);
            }
            scale_grads(&mut grads, 1.0 / batch.len() as f64);
            optimizer.step(&mut params, &grads, cfg.learning_rate);
            if !params.all_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite parameters after update at epoch {epoch}, batch {batch_idx}"
                )));
            }
            batch_losses.push(batch_loss / batch.len() as f64);
        }

        let report = evaluate_episodes(
            &val_episodes,
            &mut embedder,
            &params,
            &opts,
            cfg.tau,
            cfg.auc_mode,
            &scenario,
        )?;
        let mean_train_loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
        log.push(EpochRecord {
            epoch,
            mean_train_loss,
            batch_losses,
            val_auc: report.auc,
            val_macro_f1: report.macro_f1,
        });

        match stopper.observe(epoch, report.auc) {
            StopVerdict::Improved => best_params = params.clone(),
            StopVerdict::Continue => {}
            StopVerdict::Stop => break,
        }
    }

    let (best_epoch, best_val_auc) = stopper.best().expect("at least one epoch ran");
    Ok(TrainOutcome {
        params: best_params,
        best_epoch,
        best_val_auc,
        epochs_run,
        log,
    })
}

fn param_norms(params: &ModelParams) -> String {
    params
        .tensors()
        .iter()
        .map(|(name, t)| {
            let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
            format!("{name}={norm:.4e}")
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Per-tensor comparison of analytic and finite-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn failing_tensors(&self) -> Vec<&'static str> {
        self.entries
            .iter()
            .filter(|e| !e.pass)
            .map(|e| e.name)
            .collect()
    }
}

/// Central finite differences of the episode loss for every tensor entry.
pub fn numeric_gradients(
    input: &EpisodeInput,
    params: &ModelParams,
    opts: &ForwardOptions,
    step: f64,
) -> Result<ParamGrads> {
    let mut out = ParamGrads::new();
    for (name, tensor) in params.tensors() {
        let mut grad = ndarray::Array2::zeros(tensor.raw_dim());
        for idx in 0..tensor.len() {
            let (i, j) = (idx / tensor.ncols(), idx % tensor.ncols());
            let eval = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                p.tensors_mut()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .expect("tensor name")
                    .1[(i, j)] += delta;
                Ok(forward_episode(input, &p, opts)?.loss)
            };
            grad[(i, j)] = (eval(step)? - eval(-step)?) / (2.0 * step);
        }
        out.insert(name, grad);
    }
    Ok(out)
}

/// Guarded relative error per tensor: |a - n| / max(|a|, |n|, 1e-4).
pub fn compare_gradients(
    analytic: &ParamGrads,
    numeric: &ParamGrads,
    tolerance: f64,
) -> GradCheckReport {
    let mut entries = Vec::new();
    for (name, a) in analytic {
        let n = &numeric[name];
        let mut max_rel = 0.0f64;
        for (av, nv) in a.iter().zip(n.iter()) {
            let rel = (av - nv).abs() / av.abs().max(nv.abs()).max(1e-4);
            max_rel = max_rel.max(rel);
        }
        entries.push(GradCheckEntry {
            name,
            max_rel_err: max_rel,
            pass: max_rel < tolerance,
        });
    }
    GradCheckReport { tolerance, entries }
}

/// Full gradient check with the standard 1e-4 central-difference step.
pub fn gradient_check(
    input: &EpisodeInput,
    params: &ModelParams,
    opts: &ForwardOptions,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = forward_backward(input, params, opts)?;
    let numeric = numeric_gradients(input, params, opts, 1e-4)?;
    Ok(compare_gradients(&analytic, &numeric, tolerance))
}
