//! Prototypical network for few-shot multi-label aspect category detection,
//! with word-level attention guided by augmented label text, sentence-level
//! instance weighting, and query attention.
//!
//! The crate covers the whole experimental loop:
//!
//! - [`corpus`] / [`episode`]: JSONL corpora, disjoint aspect splits, and
//!   N-way K-shot multi-label episode sampling.
//! - [`encoder`]: the encoder abstraction with a deterministic mock
//!   (`mock:<seed>`) so everything runs without model weights.
//! - [`augment`]: masked-prompt label augmentation
//!   (`drinks_alcohol_hard` -> `drinks_alcohol_hard_vodka`).
//! - [`attention`] / [`forward`]: the attention pipeline on a reverse-mode
//!   tape, so analytic gradients come with every forward pass.
//! - [`variant`]: the `proto` / `slw` / `slw-las` / `slwla` ablations behind
//!   one trait, selected by name.
//! - [`train`] / [`predict`] / [`metrics`]: episodic training with early
//!   stopping on validation AUC, threshold decisions, AUC and macro-F1.
//! - [`checkpoint`] / [`config`] / [`results`]: binary checkpoints, flat
//!   config snapshots, and the append-only results store.

pub mod attention;
pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod episode;
pub mod error;
pub mod forward;
pub mod metrics;
pub mod params;
pub mod predict;
pub mod results;
pub mod sampling;
pub mod synth;
pub mod tape;
pub mod train;
pub mod variant;

pub use augment::{AugmentedLabel, AugmentedLabelSet};
pub use checkpoint::Checkpoint;
pub use config::{ConfigBuilder, RunConfig};
pub use corpus::{load_corpus, AspectCatalog, Corpus, LabeledSentence, SplitName};
pub use encoder::{create_encoder, EmbeddingCache, EmbeddingMatrix, Encoder, MockEncoder};
pub use episode::{episode_stream, sample_episode, Episode};
pub use error::{Error, Result};
pub use forward::{forward_backward, forward_episode, EpisodeForward, EpisodeInput, ForwardOptions};
pub use metrics::{AucMode, MetricsReport};
pub use params::ModelParams;
pub use predict::{episode_loss, predict_episode, threshold_decide, EpisodePrediction};
pub use train::{train, EpisodeEmbedder, TrainOutcome, TrainingConfig};
pub use variant::{create_variant, Variant};
