//! Independent straight-line reference of the attention pipeline.
//!
//! Everything here is plain `Vec<f64>` index arithmetic: no tape, no ndarray
//! operators, no code shared with the implementation under test. Sentences
//! are lists of token vectors; the pipeline is spelled out stage by stage.

// Explicit index loops are the point of this file.
#![allow(clippy::needless_range_loop)]

pub struct OracleParams {
    pub word_weight: Vec<Vec<f64>>,
    pub word_bias: Vec<f64>,
    pub fuse_wa: f64,
    pub fuse_wb: f64,
    pub fuse_bg: f64,
    pub sent_weight: Vec<Vec<f64>>,
    pub sent_bias: Vec<f64>,
}

pub struct OracleClass {
    /// Per sentence: token vectors (valid positions only).
    pub sentences: Vec<Vec<Vec<f64>>>,
    pub label: Option<Vec<f64>>,
}

pub struct OracleEpisode {
    pub classes: Vec<OracleClass>,
    pub queries: Vec<Vec<Vec<f64>>>,
    /// Gold bits as 0/1 per query.
    pub gold: Vec<Vec<f64>>,
}

pub struct OracleClassOut {
    pub common: Vec<f64>,
    pub word_matrix: Vec<Vec<f64>>,
    pub label_scores: Vec<Vec<f64>>,
    pub word_weights: Vec<Vec<f64>>,
    pub fused_weights: Vec<Vec<f64>>,
    pub denoised: Vec<Vec<f64>>,
    pub shortest: usize,
    pub sent_matrix: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub prototype: Vec<f64>,
}

pub struct OracleQueryOut {
    pub weights: Vec<Vec<f64>>,
    pub reps: Vec<Vec<f64>>,
    pub distances: Vec<f64>,
    pub scores: Vec<f64>,
}

pub struct OracleOut {
    pub classes: Vec<OracleClassOut>,
    pub queries: Vec<OracleQueryOut>,
    pub loss: f64,
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for s in scores {
        if *s > max {
            max = *s;
        }
    }
    let mut exps = Vec::with_capacity(scores.len());
    let mut sum = 0.0;
    for s in scores {
        let e = (s - max).exp();
        exps.push(e);
        sum += e;
    }
    for e in exps.iter_mut() {
        *e /= sum;
    }
    exps
}

/// Runs the whole pipeline with label guidance on or off.
pub fn run(episode: &OracleEpisode, params: &OracleParams, label_guidance: bool) -> OracleOut {
    let dim = episode.classes[0].sentences[0][0].len();
    let repeat = params.word_weight[0].len();

    let mut classes = Vec::new();
    for class in &episode.classes {
        // Stage 1: common aspect vector, two-stage mean.
        let mut common = vec![0.0; dim];
        for sentence in &class.sentences {
            let mut mean = vec![0.0; dim];
            for token in sentence {
                for i in 0..dim {
                    mean[i] += token[i];
                }
            }
            for i in 0..dim {
                common[i] += mean[i] / sentence.len() as f64;
            }
        }
        for c in common.iter_mut() {
            *c /= class.sentences.len() as f64;
        }

        // Stage 2: dynamic attention matrix from the repeated common vector.
        let mut word_matrix = vec![vec![0.0; dim]; dim];
        for i in 0..dim {
            let mut row_sum = 0.0;
            for a in 0..repeat {
                row_sum += params.word_weight[i][a];
            }
            for j in 0..dim {
                word_matrix[i][j] = row_sum * common[j] + params.word_bias[i];
            }
        }

        // Stages 3-8 per sentence: word attention, label scores, fusion,
        // denoised representation.
        let mut label_scores = Vec::new();
        let mut word_weights = Vec::new();
        let mut fused_weights = Vec::new();
        let mut denoised = Vec::new();
        for sentence in &class.sentences {
            let l = sentence.len();
            let mut beta_scores = vec![0.0; l];
            for (idx, token) in sentence.iter().enumerate() {
                let mut s = 0.0;
                for j in 0..dim {
                    let mut mapped = 0.0;
                    for p in 0..dim {
                        mapped += word_matrix[j][p] * token[p];
                    }
                    s += common[j] * mapped.tanh();
                }
                beta_scores[idx] = s;
            }
            let beta = softmax(&beta_scores);

            let mut alpha = vec![0.0; l];
            if let Some(label) = &class.label {
                let mut label_norm = 0.0;
                for v in label {
                    label_norm += v * v;
                }
                let label_norm = label_norm.sqrt();
                for (idx, token) in sentence.iter().enumerate() {
                    let mut dot = 0.0;
                    let mut token_norm = 0.0;
                    for i in 0..dim {
                        dot += label[i] * token[i];
                        token_norm += token[i] * token[i];
                    }
                    let token_norm = token_norm.sqrt();
                    alpha[idx] = if token_norm > 0.0 {
                        dot / (label_norm * token_norm)
                    } else {
                        0.0
                    };
                }
            }

            let applied = if label_guidance {
                let mut theta = vec![0.0; l];
                for idx in 0..l {
                    theta[idx] =
                        params.fuse_wa * alpha[idx] + params.fuse_wb * beta[idx] + params.fuse_bg;
                }
                softmax(&theta)
            } else {
                beta.clone()
            };

            let mut rep = vec![0.0; dim];
            for (idx, token) in sentence.iter().enumerate() {
                for i in 0..dim {
                    rep[i] += token[i] * applied[idx];
                }
            }

            label_scores.push(alpha);
            word_weights.push(beta);
            fused_weights.push(applied);
            denoised.push(rep);
        }

        // Stages 9-11: sentence attention anchored on the shortest sentence,
        // then the weighted-average prototype.
        let mut shortest = 0;
        for (k, sentence) in class.sentences.iter().enumerate() {
            if sentence.len() < class.sentences[shortest].len() {
                shortest = k;
            }
        }
        let anchor = denoised[shortest].clone();
        let mut sent_matrix = vec![vec![0.0; dim]; dim];
        for i in 0..dim {
            let mut row_sum = 0.0;
            for a in 0..repeat {
                row_sum += params.sent_weight[i][a];
            }
            for j in 0..dim {
                sent_matrix[i][j] = row_sum * anchor[j] + params.sent_bias[i];
            }
        }
        let mut gamma_scores = vec![0.0; denoised.len()];
        for (k, rep) in denoised.iter().enumerate() {
            let mut s = 0.0;
            for i in 0..dim {
                let mut mapped = 0.0;
                for j in 0..dim {
                    mapped += sent_matrix[i][j] * rep[j];
                }
                s += anchor[i] * mapped.tanh();
            }
            gamma_scores[k] = s;
        }
        let gamma = softmax(&gamma_scores);
        let mut prototype = vec![0.0; dim];
        for (k, rep) in denoised.iter().enumerate() {
            for i in 0..dim {
                prototype[i] += gamma[k] * rep[i];
            }
        }

        classes.push(OracleClassOut {
            common,
            word_matrix,
            label_scores,
            word_weights,
            fused_weights,
            denoised,
            shortest,
            sent_matrix,
            gamma,
            prototype,
        });
    }

    // Stage 12-13 per query: prototype-anchored attention, distances, scores.
    let mut queries = Vec::new();
    let mut loss = 0.0;
    for (m, query) in episode.queries.iter().enumerate() {
        let l = query.len();
        let mut weights = Vec::new();
        let mut reps = Vec::new();
        let mut distances = Vec::new();
        for class in &classes {
            let mut scores = vec![0.0; l];
            for (idx, token) in query.iter().enumerate() {
                let mut s = 0.0;
                for i in 0..dim {
                    s += class.prototype[i] * token[i].tanh();
                }
                scores[idx] = s;
            }
            let w = softmax(&scores);
            let mut rep = vec![0.0; dim];
            for (idx, token) in query.iter().enumerate() {
                for i in 0..dim {
                    rep[i] += w[idx] * token[i];
                }
            }
            let mut dist = 0.0;
            for i in 0..dim {
                let d = class.prototype[i] - rep[i];
                dist += d * d;
            }
            distances.push(dist.sqrt());
            weights.push(w);
            reps.push(rep);
        }
        let neg: Vec<f64> = distances.iter().map(|d| -d).collect();
        let scores = softmax(&neg);

        let gold = &episode.gold[m];
        let mut gold_sum = 0.0;
        for g in gold {
            gold_sum += g;
        }
        for (s, g) in scores.iter().zip(gold) {
            let target = g / gold_sum;
            loss += (s - target) * (s - target);
        }

        queries.push(OracleQueryOut {
            weights,
            reps,
            distances,
            scores,
        });
    }

    OracleOut {
        classes,
        queries,
        loss,
    }
}
