//! N-way K-shot multi-label episode sampling.
//!
//! Support classes are drawn uniformly without replacement from a split's
//! aspects; each class gets K sentences containing that aspect. Queries are
//! drawn from sentences containing at least one episode aspect (support
//! sentences excluded) and labeled with the gold aspects masked to the
//! episode's N aspects. Gold aspects outside the episode are noise aspects
//! and drop out of the label vector silently.

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, SplitName};
use crate::error::{Error, Result};
use crate::sampling;

/// One support class: the common aspect plus its K sentence indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportClass {
    pub aspect: String,
    /// Corpus sentence indices.
    pub sentences: Vec<usize>,
}

/// One query: a sentence index plus its N-bit label over the episode aspects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryItem {
    pub sentence: usize,
    pub labels: Vec<bool>,
}

/// One N-way K-shot meta-task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub support: Vec<SupportClass>,
    pub queries: Vec<QueryItem>,
}

impl Episode {
    pub fn way(&self) -> usize {
        self.support.len()
    }

    pub fn shot(&self) -> usize {
        self.support.first().map(|c| c.sentences.len()).unwrap_or(0)
    }

    /// Episode aspects in support order; label bit i refers to aspect i.
    pub fn aspects(&self) -> Vec<&str> {
        self.support.iter().map(|c| c.aspect.as_str()).collect()
    }

    /// Checks every episode invariant against the corpus.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let mut aspect_set = BTreeSet::new();
        let mut used = BTreeSet::new();
        for class in &self.support {
            if !aspect_set.insert(&class.aspect) {
                return Err(Error::validation(format!(
                    "duplicate support aspect '{}'",
                    class.aspect
                )));
            }
            for &idx in &class.sentences {
                if !used.insert(idx) {
                    return Err(Error::validation(format!(
                        "sentence '{}' appears twice in the episode",
                        corpus.sentence(idx).id
                    )));
                }
                if !corpus.sentence(idx).aspects.contains(&class.aspect) {
                    return Err(Error::validation(format!(
                        "support sentence '{}' lacks the common aspect '{}'",
                        corpus.sentence(idx).id,
                        class.aspect
                    )));
                }
            }
        }
        let aspects = self.aspects();
        for q in &self.queries {
            if !used.insert(q.sentence) {
                return Err(Error::validation(format!(
                    "sentence '{}' appears twice in the episode",
                    corpus.sentence(q.sentence).id
                )));
            }
            if q.labels.len() != aspects.len() {
                return Err(Error::validation("query label width differs from way"));
            }
            if !q.labels.iter().any(|b| *b) {
                return Err(Error::validation(format!(
                    "query '{}' has an all-zero label vector",
                    corpus.sentence(q.sentence).id
                )));
            }
            let gold = &corpus.sentence(q.sentence).aspects;
            for (i, aspect) in aspects.iter().enumerate() {
                if q.labels[i] != gold.contains(*aspect) {
                    return Err(Error::validation(format!(
                        "query '{}' label bit {i} disagrees with gold aspects",
                        corpus.sentence(q.sentence).id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Samples one episode from `split`.
pub fn sample_episode(
    corpus: &Corpus,
    split: SplitName,
    way: usize,
    shot: usize,
    queries_per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    if way == 0 || shot == 0 || queries_per_class == 0 {
        return Err(Error::config("way, shot and queries_per_class must be positive"));
    }
    let aspects = corpus.catalog().split_members(split);
    if aspects.len() < way {
        return Err(Error::Sampling(format!(
            "split '{split}' holds {} aspects, need {way}",
            aspects.len()
        )));
    }
    let chosen = sampling::sample_from(rng, &aspects, way);

    let mut used: BTreeSet<usize> = BTreeSet::new();
    let mut support = Vec::with_capacity(way);
    for aspect in &chosen {
        let candidates: Vec<usize> = corpus
            .sentences_with_aspect(aspect)
            .iter()
            .cloned()
            .filter(|idx| !used.contains(idx))
            .collect();
        if candidates.len() < shot {
            return Err(Error::Sampling(format!(
                "aspect '{aspect}' has {} available support sentences, need {shot}",
                candidates.len()
            )));
        }
        let picked = sampling::sample_from(rng, &candidates, shot);
        used.extend(picked.iter().cloned());
        support.push(SupportClass {
            aspect: aspect.clone(),
            sentences: picked,
        });
    }

    let m = queries_per_class * way;
    let pool: Vec<usize> = (0..corpus.len())
        .filter(|idx| {
            !used.contains(idx)
                && chosen
                    .iter()
                    .any(|a| corpus.sentence(*idx).aspects.contains(a))
        })
        .collect();
    if pool.len() < m {
        return Err(Error::Sampling(format!(
            "query pool for aspects {chosen:?} holds {} sentences, need {m}",
            pool.len()
        )));
    }
    let picked = sampling::sample_from(rng, &pool, m);
    let queries = picked
        .into_iter()
        .map(|idx| {
            let gold = &corpus.sentence(idx).aspects;
            QueryItem {
                sentence: idx,
                labels: chosen.iter().map(|a| gold.contains(a)).collect(),
            }
        })
        .collect();

    Ok(Episode { support, queries })
}

/// Samples exactly `n_tasks` episodes; the sequence is a pure function of
/// `epoch_seed`, and different epoch seeds resample.
pub fn episode_stream(
    corpus: &Corpus,
    split: SplitName,
    way: usize,
    shot: usize,
    queries_per_class: usize,
    n_tasks: usize,
    epoch_seed: u64,
) -> Result<Vec<Episode>> {
    if n_tasks == 0 {
        return Err(Error::config("n_tasks must be >= 1"));
    }
    let mut rng = sampling::seeded_rng(epoch_seed, "episode-stream");
    (0..n_tasks)
        .map(|_| sample_episode(corpus, split, way, shot, queries_per_class, &mut rng))
        .collect()
}
