//! Trainable parameters of the attention pipeline.
//!
//! All tensors are stored as 2-d arrays; vectors are single columns and the
//! fuse bias is 1x1. Shapes are fixed by (d, e_M) at construction.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::sampling;

/// Gradients keyed by tensor name, shapes mirroring [`ModelParams`].
pub type ParamGrads = BTreeMap<&'static str, Array2<f64>>;

pub const TENSOR_NAMES: [&str; 6] = [
    "word_weight",
    "word_bias",
    "fuse_weight",
    "fuse_bias",
    "sent_weight",
    "sent_bias",
];

/// The trainable linear maps of the word-level, fuse and sentence-level
/// attention stages.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dim: usize,
    repeat: usize,
    /// d x e_M map producing the word-level attention matrix.
    pub word_weight: Array2<f64>,
    /// d x 1 bias broadcast over the attention matrix columns.
    pub word_bias: Array2<f64>,
    /// 2 x 1 position-wise weights for (label score, word score).
    pub fuse_weight: Array2<f64>,
    /// 1 x 1 fuse bias.
    pub fuse_bias: Array2<f64>,
    /// d x e_M map producing the sentence-level attention matrix.
    pub sent_weight: Array2<f64>,
    /// d x 1 sentence-level bias.
    pub sent_bias: Array2<f64>,
}

impl ModelParams {
    /// Small uniform weights symmetric about zero at scale 1/sqrt(d);
    /// biases start at zero, so initial attention is near uniform.
    pub fn init(dim: usize, repeat: usize, seed: u64) -> Self {
        let mut rng = sampling::seeded_rng(seed, "param-init");
        let scale = 1.0 / (dim as f64).sqrt();
        let mut uniform =
            |rows: usize, cols: usize| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale));
        ModelParams {
            dim,
            repeat,
            word_weight: uniform(dim, repeat),
            word_bias: Array2::zeros((dim, 1)),
            fuse_weight: uniform(2, 1),
            fuse_bias: Array2::zeros((1, 1)),
            sent_weight: uniform(dim, repeat),
            sent_bias: Array2::zeros((dim, 1)),
        }
    }

    pub fn zeros(dim: usize, repeat: usize) -> Self {
        ModelParams {
            dim,
            repeat,
            word_weight: Array2::zeros((dim, repeat)),
            word_bias: Array2::zeros((dim, 1)),
            fuse_weight: Array2::zeros((2, 1)),
            fuse_bias: Array2::zeros((1, 1)),
            sent_weight: Array2::zeros((dim, repeat)),
            sent_bias: Array2::zeros((dim, 1)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The repeat count e_M.
    pub fn repeat(&self) -> usize {
        self.repeat
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)> {
        vec![
            ("word_weight", &self.word_weight),
            ("word_bias", &self.word_bias),
            ("fuse_weight", &self.fuse_weight),
            ("fuse_bias", &self.fuse_bias),
            ("sent_weight", &self.sent_weight),
            ("sent_bias", &self.sent_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        vec![
            ("word_weight", &mut self.word_weight),
            ("word_bias", &mut self.word_bias),
            ("fuse_weight", &mut self.fuse_weight),
            ("fuse_bias", &mut self.fuse_bias),
            ("sent_weight", &mut self.sent_weight),
            ("sent_bias", &mut self.sent_bias),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Rebuilds params from named tensors, validating every shape.
    pub fn from_tensors(
        dim: usize,
        repeat: usize,
        mut tensors: BTreeMap<String, Array2<f64>>,
    ) -> Result<Self> {
        let mut take = |name: &str, shape: (usize, usize)| -> Result<Array2<f64>> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| Error::validation(format!("missing tensor '{name}'")))?;
            if t.dim() != shape {
                return Err(Error::validation(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    t.dim(),
                    shape
                )));
            }
            Ok(t)
        };
        Ok(ModelParams {
            dim,
            repeat,
            word_weight: take("word_weight", (dim, repeat))?,
            word_bias: take("word_bias", (dim, 1))?,
            fuse_weight: take("fuse_weight", (2, 1))?,
            fuse_bias: take("fuse_bias", (1, 1))?,
            sent_weight: take("sent_weight", (dim, repeat))?,
            sent_bias: take("sent_bias", (dim, 1))?,
        })
    }

    /// Zero gradient accumulator with matching shapes.
    pub fn zero_grads(&self) -> ParamGrads {
        self.tensors()
            .into_iter()
            .map(|(name, t)| (name, Array2::zeros(t.raw_dim())))
            .collect()
    }
}

/// `acc += delta` element-wise across all tensors.
pub fn accumulate_grads(acc: &mut ParamGrads, delta: &ParamGrads) {
    for (name, d) in delta {
        let slot = acc.get_mut(name).expect("grad tensors aligned");
        *slot += d;
    }
}

/// `grads *= factor` across all tensors.
pub fn scale_grads(grads: &mut ParamGrads, factor: f64) {
    for g in grads.values_mut() {
        g.mapv_inplace(|x| x * factor);
    }
}
