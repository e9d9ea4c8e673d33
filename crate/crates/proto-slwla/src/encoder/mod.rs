//! Encoder abstraction: token embeddings, label-text embeddings, and masked
//! word prediction behind one trait, so the rest of the pipeline never touches
//! model weights directly.
//!
//! Encoders are selected by name. The reserved scheme `mock:<seed>` builds the
//! deterministic hash-based encoder used for tests and desk-scale runs.

mod cache;
mod mock;

pub use cache::EmbeddingCache;
pub use mock::{MlmRigRule, MockEncoder};

use ndarray::{Array1, Array2, ArrayView2, s};

use crate::error::{Error, Result};

/// Token-embedding matrix of shape d x L with `valid_len` non-padding columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    values: Array2<f64>,
    valid_len: usize,
}

impl EmbeddingMatrix {
    /// Checks the shape invariants: `1 <= valid_len <= L` and all padding
    /// columns exactly zero.
    pub fn new(values: Array2<f64>, valid_len: usize) -> Result<Self> {
        let max_len = values.ncols();
        if valid_len == 0 || valid_len > max_len {
            return Err(Error::validation(format!(
                "embedding matrix valid_len {valid_len} outside 1..={max_len}"
            )));
        }
        for j in valid_len..max_len {
            if values.column(j).iter().any(|v| *v != 0.0) {
                return Err(Error::validation(format!(
                    "embedding matrix has non-zero padding at column {j}"
                )));
            }
        }
        Ok(EmbeddingMatrix { values, valid_len })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Padded capacity L.
    pub fn max_len(&self) -> usize {
        self.values.ncols()
    }

    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    /// Full d x L matrix including zero padding.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// View of the d x valid_len non-padding block.
    pub fn valid(&self) -> ArrayView2<'_, f64> {
        self.values.slice(s![.., ..self.valid_len])
    }

    /// Mean over the valid token columns.
    pub fn masked_mean(&self) -> Array1<f64> {
        let block = self.valid();
        let mut out = Array1::zeros(self.dim());
        for col in block.columns() {
            out += &col;
        }
        out / self.valid_len as f64
    }
}

/// Probability distribution over a vocabulary, as produced by an MLM head.
#[derive(Debug, Clone)]
pub struct MlmDistribution {
    vocab: Vec<String>,
    probs: Vec<f64>,
}

impl MlmDistribution {
    pub fn new(vocab: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if vocab.len() != probs.len() {
            return Err(Error::validation("mlm distribution: vocab/probs length mismatch"));
        }
        if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::validation("mlm distribution: negative or non-finite entry"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(Error::validation(format!(
                "mlm distribution sums to {sum}, expected 1 within 1e-5"
            )));
        }
        Ok(MlmDistribution { vocab, probs })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// The `k` most probable words, descending; ties broken alphabetically.
    pub fn top_k(&self, k: usize) -> Vec<(String, f64)> {
        let mut ranked: Vec<(String, f64)> = self
            .vocab
            .iter()
            .cloned()
            .zip(self.probs.iter().cloned())
            .collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        ranked.truncate(k);
        ranked
    }
}

/// A pretrained masked-language-model encoder.
pub trait Encoder: Send + Sync {
    /// Stable identifier, recorded in caches, label files and checkpoints.
    fn id(&self) -> String;

    /// Embedding dimension d.
    fn dim(&self) -> usize;

    /// Maximum input length L; longer inputs are truncated.
    fn max_len(&self) -> usize;

    /// Whether gradients may flow into the encoder.
    fn is_trainable(&self) -> bool {
        false
    }

    fn mask_token(&self) -> &str;

    fn tokenize(&self, text: &str) -> Vec<String>;

    /// Embed a sentence to a d x L matrix, truncating/padding to L.
    fn embed_tokens(&self, text: &str) -> Result<EmbeddingMatrix>;

    /// MLM distribution for a prompt containing exactly one mask token.
    fn mlm_distribution(&self, prompt: &str) -> Result<MlmDistribution>;

    /// Label-text embedding: mean over the valid token positions.
    fn embed_label_text(&self, label_text: &str) -> Result<Array1<f64>> {
        if label_text.trim().is_empty() {
            return Err(Error::validation("label text is empty"));
        }
        Ok(self.embed_tokens(label_text)?.masked_mean())
    }

    /// Top-k whole-word candidates for the masked position.
    fn mlm_predict(&self, prompt: &str, top_k: usize) -> Result<Vec<(String, f64)>> {
        if top_k == 0 {
            return Err(Error::validation("mlm_predict: top_k must be >= 1"));
        }
        Ok(self.mlm_distribution(prompt)?.top_k(top_k))
    }
}

type EncoderFactory = fn(args: &str, dim: usize, max_len: usize) -> Result<Box<dyn Encoder>>;

/// Known encoder schemes, matched against the part before the first `:`.
const SCHEMES: &[(&str, EncoderFactory)] = &[("mock", mock::factory)];

/// Build an encoder from its configured name, e.g. `mock:7`.
pub fn create_encoder(name: &str, dim: usize, max_len: usize) -> Result<Box<dyn Encoder>> {
    let (scheme, args) = match name.split_once(':') {
        Some((s, a)) => (s, a),
        None => (name, ""),
    };
    for (known, factory) in SCHEMES {
        if *known == scheme {
            return factory(args, dim, max_len);
        }
    }
    let known: Vec<&str> = SCHEMES.iter().map(|(s, _)| *s).collect();
    Err(Error::Environment(format!(
        "unknown encoder '{name}' (known schemes: {})",
        known.join(", ")
    )))
}

/// FNV-1a over concatenated byte chunks; stable across runs and platforms.
pub(crate) fn fnv1a64(parts: &[&[u8]]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for part in parts {
        for byte in *part {
            hash ^= *byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        // Chunk separator so ("ab","c") != ("a","bc").
        hash ^= 0xff;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
