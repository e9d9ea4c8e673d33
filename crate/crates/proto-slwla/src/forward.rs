//! Episode forward pass: composes the attention stages into prototypes,
//! query representations, distance scores and the episodic loss, on a tape
//! so every trainable tensor gets an analytic gradient.

use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::attention::{col, frag, label_guided_scores, shortest_index, uncol};
use crate::encoder::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::params::{ModelParams, ParamGrads};
use crate::tape::{Tape, Var};

/// Which attention stages run. The ablation variants map onto these flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub word_attention: bool,
    pub label_guidance: bool,
    pub sentence_weighting: bool,
    pub query_attention: bool,
    /// Overrides gamma with the uniform vector, for degeneration checks.
    pub force_uniform_gamma: bool,
}

impl ForwardOptions {
    pub fn full() -> Self {
        ForwardOptions {
            word_attention: true,
            label_guidance: true,
            sentence_weighting: true,
            query_attention: true,
            force_uniform_gamma: false,
        }
    }

    pub fn plain_prototype() -> Self {
        ForwardOptions {
            word_attention: false,
            label_guidance: false,
            sentence_weighting: false,
            query_attention: false,
            force_uniform_gamma: false,
        }
    }

    pub fn sentence_weighted_only() -> Self {
        ForwardOptions {
            label_guidance: false,
            ..ForwardOptions::full()
        }
    }
}

/// One support class ready for the forward pass.
#[derive(Clone)]
pub struct ClassInput {
    pub aspect: String,
    pub sentences: Vec<Arc<EmbeddingMatrix>>,
    pub label_embedding: Option<Array1<f64>>,
}

/// A fully embedded episode.
#[derive(Clone)]
pub struct EpisodeInput {
    pub classes: Vec<ClassInput>,
    pub queries: Vec<Arc<EmbeddingMatrix>>,
    /// N-bit gold vector per query.
    pub gold: Vec<Vec<bool>>,
}

impl EpisodeInput {
    fn validate(&self, params: &ModelParams, opts: &ForwardOptions) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::validation("episode has no support classes"));
        }
        if self.queries.is_empty() {
            return Err(Error::validation("episode has no queries"));
        }
        if self.gold.len() != self.queries.len() {
            return Err(Error::validation("gold vector count differs from query count"));
        }
        let dim = params.dim();
        for class in &self.classes {
            if class.sentences.is_empty() {
                return Err(Error::validation(format!(
                    "class '{}' has no support sentences",
                    class.aspect
                )));
            }
            for s in &class.sentences {
                if s.dim() != dim {
                    return Err(Error::validation("support embedding dimension mismatch"));
                }
            }
            if opts.label_guidance && class.label_embedding.is_none() {
                return Err(Error::validation(format!(
                    "label guidance enabled but class '{}' has no label embedding",
                    class.aspect
                )));
            }
        }
        for q in &self.queries {
            if q.dim() != dim {
                return Err(Error::validation("query embedding dimension mismatch"));
            }
        }
        for bits in &self.gold {
            if bits.len() != self.classes.len() {
                return Err(Error::validation("gold vector width differs from way"));
            }
            if !bits.iter().any(|b| *b) {
                return Err(Error::validation("gold vector has no set bits"));
            }
        }
        Ok(())
    }
}

/// Denoised support representations of one class plus sentence lengths.
#[derive(Debug, Clone)]
pub struct DenoisedSupport {
    pub representations: Vec<Array1<f64>>,
    pub lengths: Vec<usize>,
}

/// Prototypes with their per-class sentence weights.
#[derive(Debug, Clone)]
pub struct PrototypeSet {
    pub prototypes: Vec<Array1<f64>>,
    pub gammas: Vec<Array1<f64>>,
}

/// Every intermediate tensor of one support class.
#[derive(Debug, Clone)]
pub struct ClassTrace {
    pub aspect: String,
    /// v: two-stage masked mean over the class.
    pub common_vector: Array1<f64>,
    /// Dynamic word-attention matrix; absent when word attention is off.
    pub word_matrix: Option<Array2<f64>>,
    /// Cosine label scores per sentence; absent without label guidance.
    pub label_scores: Vec<Option<Array1<f64>>>,
    /// Pre-fusion word attention per sentence; absent when word attention
    /// is off.
    pub word_weights: Vec<Option<Array1<f64>>>,
    /// Token weights actually applied to each sentence (uniform when word
    /// attention is off).
    pub final_weights: Vec<Array1<f64>>,
    pub denoised: Vec<Array1<f64>>,
    pub lengths: Vec<usize>,
    pub shortest: usize,
    /// Sentence-level attention matrix; absent when gamma is uniform.
    pub sent_matrix: Option<Array2<f64>>,
    pub gamma: Array1<f64>,
    pub prototype: Array1<f64>,
}

/// Intermediates of one query.
#[derive(Debug, Clone)]
pub struct QueryTrace {
    /// Token weights per class; absent when query attention is off.
    pub weights: Vec<Option<Array1<f64>>>,
    /// One representation per prototype.
    pub representations: Vec<Array1<f64>>,
    pub distances: Array1<f64>,
    /// Softmax of negative distances.
    pub scores: Array1<f64>,
}

/// Forward result: all traces plus the episodic loss.
#[derive(Debug, Clone)]
pub struct EpisodeForward {
    pub classes: Vec<ClassTrace>,
    pub queries: Vec<QueryTrace>,
    pub loss: f64,
}

impl EpisodeForward {
    pub fn prototype_set(&self) -> PrototypeSet {
        PrototypeSet {
            prototypes: self.classes.iter().map(|c| c.prototype.clone()).collect(),
            gammas: self.classes.iter().map(|c| c.gamma.clone()).collect(),
        }
    }

    pub fn denoised_support(&self, class: usize) -> DenoisedSupport {
        DenoisedSupport {
            representations: self.classes[class].denoised.clone(),
            lengths: self.classes[class].lengths.clone(),
        }
    }
}

struct ParamVars {
    word_weight: Var,
    word_bias: Var,
    fuse_weight: Var,
    fuse_bias: Var,
    sent_weight: Var,
    sent_bias: Var,
}

struct ClassVars {
    common: Var,
    word_matrix: Option<Var>,
    word_weights: Vec<Option<Var>>,
    final_weights: Vec<Var>,
    denoised: Vec<Var>,
    sent_matrix: Option<Var>,
    gamma: Var,
    prototype: Var,
}

struct QueryVars {
    weights: Vec<Option<Var>>,
    representations: Vec<Var>,
    distances: Var,
    scores: Var,
}

fn build_graph(
    tape: &mut Tape,
    input: &EpisodeInput,
    params: &ModelParams,
    opts: &ForwardOptions,
) -> Result<(Vec<ClassVars>, Vec<QueryVars>, Var, ParamVars)> {
    input.validate(params, opts)?;
    let dim = params.dim();
    let pv = ParamVars {
        word_weight: tape.param(params.word_weight.clone()),
        word_bias: tape.param(params.word_bias.clone()),
        fuse_weight: tape.param(params.fuse_weight.clone()),
        fuse_bias: tape.param(params.fuse_bias.clone()),
        sent_weight: tape.param(params.sent_weight.clone()),
        sent_bias: tape.param(params.sent_bias.clone()),
    };

    let mut class_vars = Vec::with_capacity(input.classes.len());
    for class in &input.classes {
        let blocks: Vec<Var> = class
            .sentences
            .iter()
            .map(|s| tape.constant(s.valid().to_owned()))
            .collect();
        let lengths: Vec<usize> = class.sentences.iter().map(|s| s.valid_len()).collect();

        let common = frag::common_aspect(tape, &blocks);

        let mut word_matrix = None;
        let mut word_weights = Vec::with_capacity(blocks.len());
        let mut final_weights = Vec::with_capacity(blocks.len());
        let mut denoised = Vec::with_capacity(blocks.len());
        if opts.word_attention {
            let wmat = frag::dynamic_matrix(tape, pv.word_weight, pv.word_bias, common, dim);
            word_matrix = Some(wmat);
            for (k, &block) in blocks.iter().enumerate() {
                let beta = frag::anchored_attention(tape, common, wmat, block);
                word_weights.push(Some(beta));
                let applied = if opts.label_guidance {
                    let label = class.label_embedding.as_ref().expect("validated");
                    let alpha_vals = label_guided_scores(label, &class.sentences[k])?;
                    let alpha = tape.constant(col(&alpha_vals));
                    frag::fuse(tape, alpha, beta, pv.fuse_weight, pv.fuse_bias)
                } else {
                    beta
                };
                final_weights.push(applied);
                denoised.push(frag::weighted_columns(tape, block, applied));
            }
        } else {
            for (k, &block) in blocks.iter().enumerate() {
                word_weights.push(None);
                let uniform =
                    tape.constant(Array2::from_elem((lengths[k], 1), 1.0 / lengths[k] as f64));
                final_weights.push(uniform);
                denoised.push(tape.mean_cols(block));
            }
        }

        let shortest = shortest_index(&lengths);
        let k = blocks.len();
        let (sent_matrix, gamma) = if opts.sentence_weighting && !opts.force_uniform_gamma {
            let anchor = denoised[shortest];
            let smat = frag::dynamic_matrix(tape, pv.sent_weight, pv.sent_bias, anchor, dim);
            let stacked = tape.hstack(&denoised);
            let gamma = frag::anchored_attention(tape, anchor, smat, stacked);
            (Some(smat), gamma)
        } else {
            let gamma = tape.constant(Array2::from_elem((k, 1), 1.0 / k as f64));
            (None, gamma)
        };
        let prototype = frag::convex_combination(tape, &denoised, gamma);

        class_vars.push(ClassVars {
            common,
            word_matrix,
            word_weights,
            final_weights,
            denoised,
            sent_matrix,
            gamma,
            prototype,
        });
    }

    let mut query_vars = Vec::with_capacity(input.queries.len());
    let mut per_query_losses = Vec::with_capacity(input.queries.len());
    for (m, query) in input.queries.iter().enumerate() {
        let block_values = query.valid().to_owned();
        let block = tape.constant(block_values.clone());
        let tanh_t = if opts.query_attention {
            Some(tape.constant(block_values.t().to_owned().mapv(f64::tanh)))
        } else {
            None
        };
        let shared_mean = if opts.query_attention {
            None
        } else {
            Some(tape.mean_cols(block))
        };

        let mut weights = Vec::with_capacity(class_vars.len());
        let mut representations = Vec::with_capacity(class_vars.len());
        let mut distances = Vec::with_capacity(class_vars.len());
        for class in &class_vars {
            let rep = match (tanh_t, shared_mean) {
                (Some(tt), _) => {
                    let w = frag::plain_attention(tape, class.prototype, tt);
                    weights.push(Some(w));
                    frag::weighted_columns(tape, block, w)
                }
                (None, Some(mean)) => {
                    weights.push(None);
                    mean
                }
                _ => unreachable!(),
            };
            representations.push(rep);
            distances.push(tape.euclid(class.prototype, rep));
        }
        let dvec = tape.stack_scalars(&distances);
        let negated = tape.neg(dvec);
        let scores = tape.softmax_col(negated);

        let bits = &input.gold[m];
        let set = bits.iter().filter(|b| **b).count() as f64;
        let normalized: Vec<f64> = bits
            .iter()
            .map(|b| if *b { 1.0 / set } else { 0.0 })
            .collect();
        let target = tape.constant(Array2::from_shape_vec((bits.len(), 1), normalized).unwrap());
        let diff = tape.sub(scores, target);
        per_query_losses.push(tape.sq_sum(diff));

        query_vars.push(QueryVars {
            weights,
            representations,
            distances: dvec,
            scores,
        });
    }
    let loss = tape.sum_vars(&per_query_losses);
    Ok((class_vars, query_vars, loss, pv))
}

fn extract_trace(
    tape: &Tape,
    input: &EpisodeInput,
    opts: &ForwardOptions,
    class_vars: &[ClassVars],
    query_vars: &[QueryVars],
    loss: Var,
) -> EpisodeForward {
    let vec_of = |v: Var| uncol(tape.value(v));
    let classes = input
        .classes
        .iter()
        .zip(class_vars)
        .map(|(class, vars)| {
            let lengths: Vec<usize> = class.sentences.iter().map(|s| s.valid_len()).collect();
            let label_scores = class
                .sentences
                .iter()
                .map(|s| {
                    class
                        .label_embedding
                        .as_ref()
                        .filter(|_| opts.label_guidance && opts.word_attention)
                        .map(|l| label_guided_scores(l, s).expect("validated"))
                })
                .collect();
            ClassTrace {
                aspect: class.aspect.clone(),
                common_vector: vec_of(vars.common),
                word_matrix: vars.word_matrix.map(|v| tape.value(v).clone()),
                label_scores,
                word_weights: vars.word_weights.iter().map(|w| w.map(vec_of)).collect(),
                final_weights: vars.final_weights.iter().map(|&w| vec_of(w)).collect(),
                denoised: vars.denoised.iter().map(|&r| vec_of(r)).collect(),
                shortest: shortest_index(&lengths),
                lengths,
                sent_matrix: vars.sent_matrix.map(|v| tape.value(v).clone()),
                gamma: vec_of(vars.gamma),
                prototype: vec_of(vars.prototype),
            }
        })
        .collect();
    let queries = query_vars
        .iter()
        .map(|vars| QueryTrace {
            weights: vars.weights.iter().map(|w| w.map(vec_of)).collect(),
            representations: vars.representations.iter().map(|&r| vec_of(r)).collect(),
            distances: vec_of(vars.distances),
            scores: vec_of(vars.scores),
        })
        .collect();
    EpisodeForward {
        classes,
        queries,
        loss: tape.scalar(loss),
    }
}

/// Runs the forward pass and returns every intermediate tensor.
pub fn forward_episode(
    input: &EpisodeInput,
    params: &ModelParams,
    opts: &ForwardOptions,
) -> Result<EpisodeForward> {
    let mut tape = Tape::new();
    let (class_vars, query_vars, loss, _) = build_graph(&mut tape, input, params, opts)?;
    Ok(extract_trace(&tape, input, opts, &class_vars, &query_vars, loss))
}

/// Forward plus analytic gradients of the loss for every trainable tensor.
pub fn forward_backward(
    input: &EpisodeInput,
    params: &ModelParams,
    opts: &ForwardOptions,
) -> Result<(EpisodeForward, ParamGrads)> {
    let mut tape = Tape::new();
    let (class_vars, query_vars, loss, pv) = build_graph(&mut tape, input, params, opts)?;
    let trace = extract_trace(&tape, input, opts, &class_vars, &query_vars, loss);
    let grads = tape.backward(loss)?;
    let mut out = ParamGrads::new();
    for (name, var, shape) in [
        ("word_weight", pv.word_weight, params.word_weight.dim()),
        ("word_bias", pv.word_bias, params.word_bias.dim()),
        ("fuse_weight", pv.fuse_weight, params.fuse_weight.dim()),
        ("fuse_bias", pv.fuse_bias, params.fuse_bias.dim()),
        ("sent_weight", pv.sent_weight, params.sent_weight.dim()),
        ("sent_bias", pv.sent_bias, params.sent_bias.dim()),
    ] {
        out.insert(name, grads.get_or_zeros(var, shape));
    }
    Ok((trace, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_embedding(
        rng: &mut ChaCha8Rng,
        dim: usize,
        max_len: usize,
        valid_len: usize,
    ) -> Arc<EmbeddingMatrix> {
        let mut values = Array2::zeros((dim, max_len));
        for j in 0..valid_len {
            for i in 0..dim {
                values[(i, j)] = rng.random_range(-1.0..1.0);
            }
        }
        Arc::new(EmbeddingMatrix::new(values, valid_len).unwrap())
    }

    pub(crate) fn random_input(
        rng: &mut ChaCha8Rng,
        way: usize,
        shot: usize,
        queries: usize,
        dim: usize,
        max_len: usize,
        with_labels: bool,
    ) -> EpisodeInput {
        let classes = (0..way)
            .map(|n| ClassInput {
                aspect: format!("aspect{n}"),
                sentences: (0..shot)
                    .map(|_| {
                        let len = rng.random_range(1..=max_len);
                        random_embedding(rng, dim, max_len, len)
                    })
                    .collect(),
                label_embedding: with_labels.then(|| {
                    Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
                }),
            })
            .collect();
        let queries_vec = (0..queries)
            .map(|_| {
                let len = rng.random_range(1..=max_len);
                random_embedding(rng, dim, max_len, len)
            })
            .collect();
        let gold = (0..queries)
            .map(|_| {
                let mut bits: Vec<bool> = (0..way).map(|_| rng.random_range(0..2) == 1).collect();
                if !bits.iter().any(|b| *b) {
                    bits[rng.random_range(0..way)] = true;
                }
                bits
            })
            .collect();
        EpisodeInput {
            classes,
            queries: queries_vec,
            gold,
        }
    }

    #[test]
    fn degenerate_self_match_under_uniform_attention() {
        // Single-token support reused as the query: every attention stage is
        // forced uniform, so prototype and query representation coincide.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sentence = random_embedding(&mut rng, 4, 6, 1);
        let input = EpisodeInput {
            classes: vec![ClassInput {
                aspect: "only".into(),
                sentences: vec![Arc::clone(&sentence)],
                label_embedding: None,
            }],
            queries: vec![sentence],
            gold: vec![vec![true]],
        };
        let params = ModelParams::zeros(4, 2);
        let opts = ForwardOptions::sentence_weighted_only();
        let fwd = forward_episode(&input, &params, &opts).unwrap();
        assert_eq!(fwd.queries[0].distances[0], 0.0);
        assert_eq!(fwd.queries[0].scores[0], 1.0);
        assert_eq!(fwd.loss, 0.0);
        assert_eq!(fwd.classes[0].gamma, array![1.0]);
    }

    #[test]
    fn trace_matches_standalone_operations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_input(&mut rng, 2, 3, 2, 5, 6, true);
        let params = ModelParams::init(5, 4, 9);
        let fwd = forward_episode(&input, &params, &ForwardOptions::full()).unwrap();

        for (class, trace) in input.classes.iter().zip(&fwd.classes) {
            let refs: Vec<&EmbeddingMatrix> =
                class.sentences.iter().map(|s| s.as_ref()).collect();
            let v = attention::common_aspect_vector(&refs).unwrap();
            assert_eq!(v, trace.common_vector);

            let wmat = attention::dynamic_attention_matrix(
                &v,
                &params.word_weight,
                &uncol(&params.word_bias),
            )
            .unwrap();
            assert_eq!(&wmat, trace.word_matrix.as_ref().unwrap());

            for (k, s) in class.sentences.iter().enumerate() {
                let beta = attention::word_attention(&v, &wmat, s).unwrap();
                assert_eq!(&beta, trace.word_weights[k].as_ref().unwrap());
                let alpha = attention::label_guided_scores(
                    class.label_embedding.as_ref().unwrap(),
                    s,
                )
                .unwrap();
                let fused = attention::fuse_attention(
                    &alpha,
                    &beta,
                    (params.fuse_weight[(0, 0)], params.fuse_weight[(1, 0)]),
                    params.fuse_bias[(0, 0)],
                )
                .unwrap();
                assert_eq!(fused, trace.final_weights[k]);
                let r = attention::denoise(&fused, s).unwrap();
                assert_eq!(&r, &trace.denoised[k]);
            }

            let gamma =
                attention::sentence_attention(&trace.denoised, &trace.lengths, &params).unwrap();
            assert_eq!(gamma, trace.gamma);
            let proto = attention::prototype(&gamma, &trace.denoised).unwrap();
            assert_eq!(proto, trace.prototype);
        }

        for (query, qtrace) in input.queries.iter().zip(&fwd.queries) {
            for (n, trace) in fwd.classes.iter().enumerate() {
                let rep =
                    attention::query_representation(&trace.prototype, query).unwrap();
                assert_eq!(&rep, &qtrace.representations[n]);
            }
        }
    }

    #[test]
    fn softmax_outputs_live_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for case in 0..50 {
            let input = random_input(&mut rng, 2, 2, 2, 4, 5, true);
            let params = ModelParams::init(4, 4, case);
            let fwd = forward_episode(&input, &params, &ForwardOptions::full()).unwrap();
            for class in &fwd.classes {
                for w in &class.final_weights {
                    assert!(w.iter().all(|x| *x >= 0.0));
                    assert!((w.sum() - 1.0).abs() < 1e-6);
                }
                assert!((class.gamma.sum() - 1.0).abs() < 1e-6);
                assert!(class.gamma.iter().all(|g| *g >= 0.0));
            }
            for q in &fwd.queries {
                assert!((q.scores.sum() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn k_equals_one_degenerates_to_single_representation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_input(&mut rng, 2, 1, 2, 4, 5, false);
        let params = ModelParams::init(4, 4, 1);
        let fwd =
            forward_episode(&input, &params, &ForwardOptions::sentence_weighted_only()).unwrap();
        for class in &fwd.classes {
            assert_eq!(class.gamma.len(), 1);
            assert!((class.gamma[0] - 1.0).abs() < 1e-15);
            assert_eq!(class.prototype, class.denoised[0]);
        }
    }

    #[test]
    fn forced_uniform_gamma_reproduces_plain_mean_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random_input(&mut rng, 2, 4, 2, 4, 5, false);
        let params = ModelParams::init(4, 4, 2);
        let opts = ForwardOptions {
            force_uniform_gamma: true,
            ..ForwardOptions::sentence_weighted_only()
        };
        let fwd = forward_episode(&input, &params, &opts).unwrap();
        for class in &fwd.classes {
            assert!(class.sent_matrix.is_none());
            // Vanilla prototype: fold of (1/K) * r_k in index order, the
            // same float operations the weighted path performs.
            let k = class.denoised.len() as f64;
            let mut mean = class.denoised[0].mapv(|x| x * (1.0 / k));
            for r in &class.denoised[1..] {
                mean = mean + r.mapv(|x| x * (1.0 / k));
            }
            assert_eq!(class.prototype, mean);
        }
    }

    #[test]
    fn permuting_support_permutes_gamma_and_keeps_prototype() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 4;
        // Strictly distinct lengths so the shortest anchor is stable.
        let sentences: Vec<Arc<EmbeddingMatrix>> = (0..3)
            .map(|k| random_embedding(&mut rng, dim, 6, k + 2))
            .collect();
        let query = random_embedding(&mut rng, dim, 6, 3);
        let params = ModelParams::init(dim, 4, 3);
        let opts = ForwardOptions::sentence_weighted_only();

        let base = EpisodeInput {
            classes: vec![ClassInput {
                aspect: "a".into(),
                sentences: sentences.clone(),
                label_embedding: None,
            }],
            queries: vec![Arc::clone(&query)],
            gold: vec![vec![true]],
        };
        let fwd = forward_episode(&base, &params, &opts).unwrap();

        let perm = [2usize, 0, 1];
        let permuted = EpisodeInput {
            classes: vec![ClassInput {
                aspect: "a".into(),
                sentences: perm.iter().map(|&i| Arc::clone(&sentences[i])).collect(),
                label_embedding: None,
            }],
            queries: vec![query],
            gold: vec![vec![true]],
        };
        let fwd_p = forward_episode(&permuted, &params, &opts).unwrap();

        for (slot, &orig) in perm.iter().enumerate() {
            assert!((fwd_p.classes[0].gamma[slot] - fwd.classes[0].gamma[orig]).abs() < 1e-12);
        }
        for (a, b) in fwd_p.classes[0]
            .prototype
            .iter()
            .zip(fwd.classes[0].prototype.iter())
        {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn prototype_stays_in_convex_hull_of_denoised() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let input = random_input(&mut rng, 2, 3, 1, 3, 5, true);
        let params = ModelParams::init(3, 4, 7);
        let fwd = forward_episode(&input, &params, &ForwardOptions::full()).unwrap();
        for class in &fwd.classes {
            // Reconstruction from the simplex weights.
            let mut recon: Array1<f64> = Array1::zeros(3);
            for (g, r) in class.gamma.iter().zip(&class.denoised) {
                recon = recon + r.mapv(|x| x * *g);
            }
            for (a, b) in recon.iter().zip(class.prototype.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = random_input(&mut rng, 2, 2, 2, 4, 5, true);
        let params = ModelParams::init(4, 3, 11);
        let opts = ForwardOptions::full();
        let (_, analytic) = forward_backward(&input, &params, &opts).unwrap();

        let h = 1e-5;
        for (name, tensor) in params.tensors() {
            let analytic_t = &analytic[name];
            for idx in 0..tensor.len() {
                let (i, j) = (idx / tensor.ncols(), idx % tensor.ncols());
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    p.tensors_mut()
                        .into_iter()
                        .find(|(n, _)| *n == name)
                        .unwrap()
                        .1[(i, j)] += delta;
                    forward_episode(&input, &p, &opts).unwrap().loss
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic_t[(i, j)];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (a - numeric).abs() / denom < 1e-4,
                    "{name}[{i},{j}]: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn label_guidance_requires_label_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let input = random_input(&mut rng, 2, 2, 1, 4, 5, false);
        let params = ModelParams::init(4, 4, 0);
        assert!(forward_episode(&input, &params, &ForwardOptions::full()).is_err());
    }
}
