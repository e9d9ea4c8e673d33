//! Deterministic mock encoder.
//!
//! Each token maps to a unit vector drawn from an RNG seeded by a stable hash
//! of (seed, token), so distinct tokens are near-orthogonal at large d. MLM
//! scores are hash-derived from (seed, token, prompt), optionally overridden
//! by rig rules so tests can pin the ranking.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{fnv1a64, EmbeddingMatrix, Encoder, MlmDistribution};
use crate::error::{Error, Result};

const MASK_TOKEN: &str = "[MASK]";

/// Forces a ranked list of words to the top of the MLM distribution whenever
/// `trigger` appears as a token of the prompt.
#[derive(Debug, Clone)]
pub struct MlmRigRule {
    pub trigger: String,
    pub words: Vec<String>,
}

/// Pure, seeded stand-in for a pretrained MLM encoder.
pub struct MockEncoder {
    seed: u64,
    dim: usize,
    max_len: usize,
    rig: Vec<MlmRigRule>,
}

impl MockEncoder {
    pub fn new(seed: u64, dim: usize, max_len: usize) -> Self {
        MockEncoder {
            seed,
            dim,
            max_len,
            rig: Vec::new(),
        }
    }

    /// Adds a rig rule; `words` are ranked, strongest first.
    pub fn with_mlm_rule(mut self, trigger: &str, words: &[&str]) -> Self {
        self.rig.push(MlmRigRule {
            trigger: trigger.to_lowercase(),
            words: words.iter().map(|w| w.to_lowercase()).collect(),
        });
        self
    }

    /// The hash-derived unit vector for one token.
    pub fn token_vector(&self, token: &str) -> Array1<f64> {
        let h = fnv1a64(&[b"tok", &self.seed.to_le_bytes(), token.as_bytes()]);
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let mut v: Array1<f64> =
            Array1::from_shape_fn(self.dim, |_| StandardNormal.sample(&mut rng));
        let norm = v.dot(&v).sqrt();
        if norm > 0.0 {
            v /= norm;
        } else {
            v[0] = 1.0;
        }
        v
    }

    /// Base MLM score in (0, 1) for a token in a given prompt.
    fn base_score(&self, token: &str, prompt: &str) -> f64 {
        let h = fnv1a64(&[
            b"mlm",
            &self.seed.to_le_bytes(),
            token.as_bytes(),
            prompt.as_bytes(),
        ]);
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl Encoder for MockEncoder {
    fn id(&self) -> String {
        format!("mock:{}", self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn mask_token(&self) -> &str {
        MASK_TOKEN
    }

    /// Lowercases, keeps the literal mask token whole, and splits on any
    /// non-alphanumeric character (so underscore-joined labels break into
    /// their parts). No special boundary tokens are added.
    fn tokenize(&self, text: &str) -> Vec<String> {
        let lower = text.to_lowercase().replace("[mask]", "\u{1}");
        let mut tokens = Vec::new();
        let mut current = String::new();
        for c in lower.chars() {
            if c == '\u{1}' {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(MASK_TOKEN.to_string());
            } else if c.is_alphanumeric() {
                current.push(c);
            } else if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
        tokens
    }

    fn embed_tokens(&self, text: &str) -> Result<EmbeddingMatrix> {
        let tokens = self.tokenize(text);
        if tokens.is_empty() {
            return Err(Error::validation(format!(
                "text tokenizes to zero tokens: {text:?}"
            )));
        }
        let valid_len = tokens.len().min(self.max_len);
        let mut values = Array2::zeros((self.dim, self.max_len));
        for (j, token) in tokens.iter().take(valid_len).enumerate() {
            values.column_mut(j).assign(&self.token_vector(token));
        }
        EmbeddingMatrix::new(values, valid_len)
    }

    fn mlm_distribution(&self, prompt: &str) -> Result<MlmDistribution> {
        let tokens = self.tokenize(prompt);
        let mask_count = tokens.iter().filter(|t| *t == MASK_TOKEN).count();
        if mask_count != 1 {
            return Err(Error::validation(format!(
                "prompt must contain exactly one {MASK_TOKEN} token, found {mask_count}"
            )));
        }

        // Vocabulary: distinct prompt tokens in first-seen order, plus any
        // rig words whose trigger fired.
        let mut vocab: Vec<String> = Vec::new();
        for t in &tokens {
            if t != MASK_TOKEN && !vocab.contains(t) {
                vocab.push(t.clone());
            }
        }
        let mut scores: Vec<f64> = vocab.iter().map(|t| self.base_score(t, prompt)).collect();
        for rule in &self.rig {
            if !tokens.contains(&rule.trigger) {
                continue;
            }
            for (rank, word) in rule.words.iter().enumerate() {
                let boost = 8.0 * (rule.words.len() - rank) as f64;
                match vocab.iter().position(|v| v == word) {
                    Some(i) => scores[i] += boost,
                    None => {
                        vocab.push(word.clone());
                        scores.push(self.base_score(word, prompt) + boost);
                    }
                }
            }
        }

        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        MlmDistribution::new(vocab, probs)
    }
}

pub(super) fn factory(args: &str, dim: usize, max_len: usize) -> Result<Box<dyn Encoder>> {
    let seed: u64 = args.parse().map_err(|_| {
        Error::Environment(format!(
            "mock encoder expects 'mock:<seed>' with an integer seed, got 'mock:{args}'"
        ))
    })?;
    if dim == 0 || max_len == 0 {
        return Err(Error::Environment(
            "mock encoder requires positive embed_dim and max_len".into(),
        ));
    }
    Ok(Box::new(MockEncoder::new(seed, dim, max_len)))
}
