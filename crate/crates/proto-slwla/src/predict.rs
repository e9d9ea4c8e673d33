//! Distance-based prediction: negative-distance softmax scores, threshold
//! decisions, and the episodic MSE loss.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::forward::{EpisodeForward, PrototypeSet};

/// Scores, decisions and raw distances for every query of one episode.
#[derive(Debug, Clone)]
pub struct EpisodePrediction {
    /// Per query: softmax scores over the N classes.
    pub scores: Vec<Array1<f64>>,
    /// Per query: thresholded multi-label decisions.
    pub decisions: Vec<Vec<bool>>,
    /// Per query: Euclidean distances to the N prototypes.
    pub distances: Vec<Array1<f64>>,
}

fn softmax(scores: &Array1<f64>) -> Array1<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = scores.mapv(|s| (s - max).exp());
    let sum = exps.sum();
    exps / sum
}

/// Multi-label decision: bit n set iff score_n >= tau; if nothing clears the
/// threshold, the argmax bit is set (ties toward the lowest index).
pub fn threshold_decide(scores: &Array1<f64>, tau: f64) -> Vec<bool> {
    let mut bits: Vec<bool> = scores.iter().map(|s| *s >= tau).collect();
    if !bits.iter().any(|b| *b) {
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        bits[best] = true;
    }
    bits
}

/// Scores every query against the prototypes: softmax of negative Euclidean
/// distances, then threshold decisions.
pub fn predict_episode(
    prototypes: &PrototypeSet,
    query_representations: &[Vec<Array1<f64>>],
    tau: f64,
) -> Result<EpisodePrediction> {
    let n = prototypes.prototypes.len();
    if n == 0 {
        return Err(Error::validation("predict_episode: no prototypes"));
    }
    let mut scores = Vec::with_capacity(query_representations.len());
    let mut decisions = Vec::with_capacity(query_representations.len());
    let mut distances = Vec::with_capacity(query_representations.len());
    for reps in query_representations {
        if reps.len() != n {
            return Err(Error::validation(format!(
                "predict_episode: {} representations for {n} prototypes",
                reps.len()
            )));
        }
        let mut dist = Array1::zeros(n);
        for (i, (p, r)) in prototypes.prototypes.iter().zip(reps).enumerate() {
            if p.len() != r.len() {
                return Err(Error::validation("predict_episode: dimension mismatch"));
            }
            let diff = p - r;
            dist[i] = diff.dot(&diff).sqrt();
        }
        let y = softmax(&dist.mapv(|d| -d));
        decisions.push(threshold_decide(&y, tau));
        scores.push(y);
        distances.push(dist);
    }
    Ok(EpisodePrediction {
        scores,
        decisions,
        distances,
    })
}

/// Prediction straight from a forward trace.
pub fn predict_forward(forward: &EpisodeForward, tau: f64) -> Result<EpisodePrediction> {
    let prototypes = forward.prototype_set();
    let reps: Vec<Vec<Array1<f64>>> = forward
        .queries
        .iter()
        .map(|q| q.representations.clone())
        .collect();
    predict_episode(&prototypes, &reps, tau)
}

/// Episodic MSE loss: gold vectors normalized to sum 1, then the summed
/// squared difference against the softmax scores, over queries and classes.
pub fn episode_loss(scores: &[Array1<f64>], gold: &[Vec<bool>]) -> Result<f64> {
    if scores.len() != gold.len() {
        return Err(Error::validation("episode_loss: score/gold count mismatch"));
    }
    let mut loss = 0.0;
    for (y_hat, bits) in scores.iter().zip(gold) {
        if y_hat.len() != bits.len() {
            return Err(Error::validation("episode_loss: width mismatch"));
        }
        let set = bits.iter().filter(|b| **b).count() as f64;
        if set == 0.0 {
            return Err(Error::validation("episode_loss: all-zero gold vector"));
        }
        for (s, b) in y_hat.iter().zip(bits) {
            let target = if *b { 1.0 / set } else { 0.0 };
            loss += (s - target) * (s - target);
        }
    }
    Ok(loss)
}
