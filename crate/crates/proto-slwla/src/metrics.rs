//! Evaluation metrics: ROC AUC over (query, class) score/gold pairs and
//! macro-F1 over thresholded decisions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How AUC pools pairs within an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AucMode {
    /// All (query, class) pairs of the episode pooled into one curve.
    Pooled,
    /// One curve per class, averaged over classes with both labels present.
    Macro,
}

impl AucMode {
    pub fn parse(s: &str) -> Result<AucMode> {
        match s {
            "pooled" => Ok(AucMode::Pooled),
            "macro" => Ok(AucMode::Macro),
            other => Err(Error::config(format!("unknown auc mode '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AucMode::Pooled => "pooled",
            AucMode::Macro => "macro",
        }
    }
}

/// Rank-based ROC AUC with midranks for ties; `None` when only one label is
/// present.
pub fn auc(pairs: &[(f64, bool)]) -> Option<f64> {
    let positives = pairs.iter().filter(|(_, g)| *g).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        pairs[a]
            .0
            .partial_cmp(&pairs[b].0)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    // Midranks over tied score runs.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pairs[order[j + 1]].0 == pairs[order[i]].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if pairs[idx].1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Per-class F1 from binary decisions, averaged over the N classes. A class
/// without true or predicted positives contributes 0. Returns a fraction.
pub fn macro_f1(decisions: &[Vec<bool>], gold: &[Vec<bool>]) -> Result<f64> {
    if decisions.len() != gold.len() || decisions.is_empty() {
        return Err(Error::validation("macro_f1: decision/gold count mismatch"));
    }
    let way = gold[0].len();
    let mut f1_sum = 0.0;
    for class in 0..way {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (d, g) in decisions.iter().zip(gold) {
            if d.len() != way || g.len() != way {
                return Err(Error::validation("macro_f1: ragged label widths"));
            }
            match (d[class], g[class]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            f1_sum += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok(f1_sum / way as f64)
}

/// Pools an episode's (score, gold) pairs per `mode`; `None` means the
/// episode has no defined AUC and is skipped.
pub fn episode_auc(scores: &[Vec<f64>], gold: &[Vec<bool>], mode: AucMode) -> Option<f64> {
    match mode {
        AucMode::Pooled => {
            let pairs: Vec<(f64, bool)> = scores
                .iter()
                .zip(gold)
                .flat_map(|(s, g)| s.iter().cloned().zip(g.iter().cloned()))
                .collect();
            auc(&pairs)
        }
        AucMode::Macro => {
            let way = gold.first().map(Vec::len)?;
            let mut sum = 0.0;
            let mut defined = 0usize;
            for class in 0..way {
                let pairs: Vec<(f64, bool)> = scores
                    .iter()
                    .zip(gold)
                    .map(|(s, g)| (s[class], g[class]))
                    .collect();
                if let Some(a) = auc(&pairs) {
                    sum += a;
                    defined += 1;
                }
            }
            (defined > 0).then(|| sum / defined as f64)
        }
    }
}

/// Aggregated evaluation result for one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean per-episode AUC in [0, 1].
    pub auc: f64,
    /// Mean per-episode macro-F1, as a percentage.
    pub macro_f1: f64,
    /// Episodes evaluated.
    pub episodes: usize,
    /// Episodes skipped because AUC was undefined.
    pub skipped: usize,
    pub way: usize,
    pub shot: usize,
    pub m: usize,
    pub ablation: String,
}
