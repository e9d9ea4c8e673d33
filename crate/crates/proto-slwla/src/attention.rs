//! Attention primitives: common aspect vectors, dynamic word attention,
//! label-guided fusion, sentence weighting, prototypes, and query attention.
//!
//! Every public operation is a thin wrapper over the same tape fragments the
//! episode forward pass uses, so the standalone results and the trained
//! pipeline can never drift apart. Attention weights are computed over valid
//! token positions only: padding columns never enter a softmax and therefore
//! carry exactly zero weight.

use ndarray::{Array1, Array2};

use crate::encoder::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tape::{Tape, Var};

/// Index of the shortest sentence; ties break toward the lowest index.
pub fn shortest_index(lengths: &[usize]) -> usize {
    let mut best = 0;
    for (i, len) in lengths.iter().enumerate().skip(1) {
        if *len < lengths[best] {
            best = i;
        }
    }
    best
}

/// Column vector (d x 1) from a 1-d array.
pub(crate) fn col(v: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column shape")
}

/// 1-d array from a single-column matrix.
pub(crate) fn uncol(m: &Array2<f64>) -> Array1<f64> {
    debug_assert_eq!(m.ncols(), 1);
    m.column(0).to_owned()
}

/// Tape fragments shared by the standalone ops and the episode forward pass.
pub(crate) mod frag {
    use super::*;

    /// Mean over valid tokens per instance, then mean over instances.
    pub fn common_aspect(tape: &mut Tape, sentence_blocks: &[Var]) -> Var {
        let means: Vec<Var> = sentence_blocks
            .iter()
            .map(|&h| tape.mean_cols(h))
            .collect();
        let stacked = tape.hstack(&means);
        tape.mean_cols(stacked)
    }

    /// Affine map from an anchor vector to a d x d attention matrix:
    /// row-summed weight outer the anchor, plus the bias on every column.
    pub fn dynamic_matrix(tape: &mut Tape, weight: Var, bias: Var, anchor: Var, dim: usize) -> Var {
        let u = tape.row_sum(weight);
        let outer = tape.outer(u, anchor);
        let b = tape.broadcast_col(bias, dim);
        tape.add(outer, b)
    }

    /// softmax over columns of `target` of anchor . tanh(matrix . target).
    pub fn anchored_attention(tape: &mut Tape, anchor: Var, matrix: Var, target: Var) -> Var {
        let mapped = tape.matmul(matrix, target);
        let squashed = tape.tanh(mapped);
        let transposed = tape.transpose(squashed);
        let scores = tape.matmul(transposed, anchor);
        tape.softmax_col(scores)
    }

    /// Position-wise affine fusion of two score vectors, then softmax.
    pub fn fuse(tape: &mut Tape, alpha: Var, beta: Var, fuse_weight: Var, fuse_bias: Var) -> Var {
        let w_alpha = tape.entry(fuse_weight, 0, 0);
        let w_beta = tape.entry(fuse_weight, 1, 0);
        let scaled_alpha = tape.scale_by_scalar(alpha, w_alpha);
        let scaled_beta = tape.scale_by_scalar(beta, w_beta);
        let combined = tape.add(scaled_alpha, scaled_beta);
        let bias = tape.entry(fuse_bias, 0, 0);
        let shifted = tape.add_scalar(combined, bias);
        tape.softmax_col(shifted)
    }

    /// Weighted sum of token columns: H (d x l) . w (l x 1).
    pub fn weighted_columns(tape: &mut Tape, block: Var, weights: Var) -> Var {
        tape.matmul(block, weights)
    }

    /// sum_k weights[k] * parts[k], accumulated in index order.
    pub fn convex_combination(tape: &mut Tape, parts: &[Var], weights: Var) -> Var {
        let terms: Vec<Var> = parts
            .iter()
            .enumerate()
            .map(|(k, &part)| {
                let w = tape.entry(weights, k, 0);
                tape.scale_by_scalar(part, w)
            })
            .collect();
        tape.sum_vars(&terms)
    }

    /// softmax over tokens of p . tanh(h_i); `tanh_block_t` is the l x d
    /// transpose of tanh applied to the valid block.
    pub fn plain_attention(tape: &mut Tape, anchor: Var, tanh_block_t: Var) -> Var {
        let scores = tape.matmul(tanh_block_t, anchor);
        tape.softmax_col(scores)
    }
}

fn check_dim(h: &EmbeddingMatrix, dim: usize) -> Result<()> {
    if h.dim() != dim {
        return Err(Error::validation(format!(
            "embedding dimension {} does not match expected {dim}",
            h.dim()
        )));
    }
    Ok(())
}

/// Common aspect vector: masked mean per instance, then mean over instances.
pub fn common_aspect_vector(instances: &[&EmbeddingMatrix]) -> Result<Array1<f64>> {
    let first = instances
        .first()
        .ok_or_else(|| Error::validation("common_aspect_vector: no instances"))?;
    let dim = first.dim();
    let mut tape = Tape::new();
    let blocks: Vec<Var> = instances
        .iter()
        .map(|h| {
            check_dim(h, dim)?;
            Ok(tape.constant(h.valid().to_owned()))
        })
        .collect::<Result<_>>()?;
    let v = frag::common_aspect(&mut tape, &blocks);
    Ok(uncol(tape.value(v)))
}

/// Dynamic attention matrix: weight-row-sums outer the anchor plus the bias
/// on every column; affine in `anchor`.
pub fn dynamic_attention_matrix(
    anchor: &Array1<f64>,
    weight: &Array2<f64>,
    bias: &Array1<f64>,
) -> Result<Array2<f64>> {
    let dim = anchor.len();
    if weight.nrows() != dim || bias.len() != dim {
        return Err(Error::validation(format!(
            "dynamic_attention_matrix: weight {:?} / bias {} inconsistent with anchor dim {dim}",
            weight.dim(),
            bias.len()
        )));
    }
    let mut tape = Tape::new();
    let w = tape.constant(weight.clone());
    let b = tape.constant(col(bias));
    let a = tape.constant(col(anchor));
    let m = frag::dynamic_matrix(&mut tape, w, b, a, dim);
    Ok(tape.value(m).clone())
}

/// Word-level attention weights over the valid tokens of one sentence.
pub fn word_attention(
    anchor: &Array1<f64>,
    matrix: &Array2<f64>,
    sentence: &EmbeddingMatrix,
) -> Result<Array1<f64>> {
    let dim = anchor.len();
    check_dim(sentence, dim)?;
    if matrix.dim() != (dim, dim) {
        return Err(Error::validation(format!(
            "word_attention: matrix shape {:?}, expected ({dim}, {dim})",
            matrix.dim()
        )));
    }
    let mut tape = Tape::new();
    let a = tape.constant(col(anchor));
    let m = tape.constant(matrix.clone());
    let h = tape.constant(sentence.valid().to_owned());
    let weights = frag::anchored_attention(&mut tape, a, m, h);
    Ok(uncol(tape.value(weights)))
}

/// Cosine similarity between the label embedding and each valid token;
/// zero-norm token columns score 0.
pub fn label_guided_scores(
    label_embedding: &Array1<f64>,
    sentence: &EmbeddingMatrix,
) -> Result<Array1<f64>> {
    check_dim(sentence, label_embedding.len())?;
    let label_norm = label_embedding.dot(label_embedding).sqrt();
    if label_norm == 0.0 {
        return Err(Error::validation("label_guided_scores: zero label embedding"));
    }
    let block = sentence.valid();
    let mut scores = Array1::zeros(sentence.valid_len());
    for (i, token) in block.columns().into_iter().enumerate() {
        let token_norm = token.dot(&token).sqrt();
        if token_norm > 0.0 {
            scores[i] = label_embedding.dot(&token) / (label_norm * token_norm);
        }
    }
    Ok(scores)
}

/// Position-wise affine fusion of label and word scores, softmax-normalized.
pub fn fuse_attention(
    label_scores: &Array1<f64>,
    word_weights: &Array1<f64>,
    fuse_weight: (f64, f64),
    fuse_bias: f64,
) -> Result<Array1<f64>> {
    if label_scores.len() != word_weights.len() {
        return Err(Error::validation(format!(
            "fuse_attention: score lengths {} vs {}",
            label_scores.len(),
            word_weights.len()
        )));
    }
    let mut tape = Tape::new();
    let a = tape.constant(col(label_scores));
    let b = tape.constant(col(word_weights));
    let fw = tape.constant(Array2::from_shape_vec((2, 1), vec![fuse_weight.0, fuse_weight.1]).unwrap());
    let fb = tape.constant(Array2::from_elem((1, 1), fuse_bias));
    let fused = frag::fuse(&mut tape, a, b, fw, fb);
    Ok(uncol(tape.value(fused)))
}

/// Weighted sum of valid token columns.
pub fn denoise(weights: &Array1<f64>, sentence: &EmbeddingMatrix) -> Result<Array1<f64>> {
    if weights.len() != sentence.valid_len() {
        return Err(Error::validation(format!(
            "denoise: {} weights for {} valid tokens",
            weights.len(),
            sentence.valid_len()
        )));
    }
    let mut tape = Tape::new();
    let h = tape.constant(sentence.valid().to_owned());
    let w = tape.constant(col(weights));
    let r = frag::weighted_columns(&mut tape, h, w);
    Ok(uncol(tape.value(r)))
}

/// Sentence-level weights over the K denoised representations, anchored on
/// the denoised vector of the shortest sentence.
pub fn sentence_attention(
    denoised: &[Array1<f64>],
    lengths: &[usize],
    params: &ModelParams,
) -> Result<Array1<f64>> {
    if denoised.is_empty() || denoised.len() != lengths.len() {
        return Err(Error::validation(
            "sentence_attention: empty class or length mismatch",
        ));
    }
    let dim = denoised[0].len();
    if dim != params.dim() {
        return Err(Error::validation("sentence_attention: dimension mismatch"));
    }
    let mut tape = Tape::new();
    let cols: Vec<Var> = denoised.iter().map(|r| tape.constant(col(r))).collect();
    let anchor = cols[shortest_index(lengths)];
    let w = tape.constant(params.sent_weight.clone());
    let b = tape.constant(params.sent_bias.clone());
    let matrix = frag::dynamic_matrix(&mut tape, w, b, anchor, dim);
    let stacked = tape.hstack(&cols);
    let gamma = frag::anchored_attention(&mut tape, anchor, matrix, stacked);
    Ok(uncol(tape.value(gamma)))
}

/// Prototype: weighted average of the denoised representations.
pub fn prototype(gamma: &Array1<f64>, denoised: &[Array1<f64>]) -> Result<Array1<f64>> {
    if gamma.len() != denoised.len() || denoised.is_empty() {
        return Err(Error::validation("prototype: weight/representation mismatch"));
    }
    let mut tape = Tape::new();
    let parts: Vec<Var> = denoised.iter().map(|r| tape.constant(col(r))).collect();
    let g = tape.constant(col(gamma));
    let p = frag::convex_combination(&mut tape, &parts, g);
    Ok(uncol(tape.value(p)))
}

/// Query representation attentive to one prototype: softmax over tokens of
/// p . tanh(h_i), multiplied back into the token columns.
pub fn query_representation(
    proto: &Array1<f64>,
    query: &EmbeddingMatrix,
) -> Result<Array1<f64>> {
    check_dim(query, proto.len())?;
    let mut tape = Tape::new();
    let p = tape.constant(col(proto));
    let block = query.valid().to_owned();
    let tanh_t = tape.constant(block.t().to_owned().mapv(f64::tanh));
    let weights = frag::plain_attention(&mut tape, p, tanh_t);
    let h = tape.constant(block);
    let rep = frag::weighted_columns(&mut tape, h, weights);
    Ok(uncol(tape.value(rep)))
}
