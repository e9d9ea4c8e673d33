//! Label augmentation: mine label-related words with a masked-prompt
//! template, filter them, and append the most frequent ones to the label
//! name with underscores.
//!
//! The pipeline runs offline (`augment-labels` command) and persists its
//! output; training reads the persisted file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::sampling;

/// Version of the shipped stop-word list, recorded in every persisted label
/// file; bumped whenever the list changes.
pub const STOP_WORDS_VERSION: u32 = 1;

pub const STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "all", "also", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "him", "his",
    "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just", "me", "more", "most",
    "my", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other", "our",
    "ours", "out", "over", "own", "quite", "really", "same", "she", "should", "so", "some",
    "such", "than", "that", "the", "their", "theirs", "them", "then", "there", "these", "they",
    "this", "those", "through", "to", "too", "under", "until", "up", "very", "was", "we", "were",
    "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would",
    "you", "your", "yours",
];

/// Fixed words of the prompt suffix. Candidates echoing these are never
/// recorded; they come from the template, not the sentence.
const TEMPLATE_SCAFFOLD: &[&str] = &["it", "is", "about", "and", "its", "synonym"];

/// Builds the masked prompt `"<sentence>. It is about <label>, and its
/// synonym is <mask>."`, without doubling terminal punctuation.
pub fn build_prompt(sentence: &str, label_name: &str, mask_token: &str) -> Result<String> {
    let sentence = sentence.trim();
    if sentence.is_empty() {
        return Err(Error::validation("build_prompt: sentence is empty"));
    }
    if label_name.trim().is_empty() {
        return Err(Error::validation("build_prompt: label name is empty"));
    }
    let stem = if sentence.ends_with(['.', '!', '?']) {
        sentence.to_string()
    } else {
        format!("{sentence}.")
    };
    Ok(format!(
        "{stem} It is about {label_name}, and its synonym is {mask_token}."
    ))
}

/// Per-sentence ranked candidates plus aggregate frequency counts. A word
/// counts once per sentence that contributed it.
#[derive(Debug, Clone, Default)]
pub struct CandidateTable {
    per_sentence: Vec<(String, Vec<String>)>,
    counts: BTreeMap<String, usize>,
}

impl CandidateTable {
    fn from_per_sentence(per_sentence: Vec<(String, Vec<String>)>) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for (_, words) in &per_sentence {
            for w in words {
                *counts.entry(w.clone()).or_insert(0) += 1;
            }
        }
        CandidateTable {
            per_sentence,
            counts,
        }
    }

    pub fn counts(&self) -> &BTreeMap<String, usize> {
        &self.counts
    }

    pub fn per_sentence(&self) -> &[(String, Vec<String>)] {
        &self.per_sentence
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Table built directly from counts, for callers that already aggregated.
    pub fn from_counts(counts: BTreeMap<String, usize>) -> Self {
        let per_sentence = counts
            .iter()
            .flat_map(|(w, n)| (0..*n).map(move |i| (format!("#{i}"), vec![w.clone()])))
            .collect();
        CandidateTable::from_per_sentence(per_sentence)
    }
}

/// Samples up to `sentences_per_class` sentences containing `aspect`, runs
/// the masked prompt through the encoder, and records the top
/// `top_k_per_sentence` candidates of each sentence (lower-cased; template
/// scaffold words, label tokens and the mask token are never recorded).
pub fn collect_candidates(
    corpus: &Corpus,
    aspect: &str,
    sentences_per_class: usize,
    top_k_per_sentence: usize,
    encoder: &dyn Encoder,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<CandidateTable> {
    if sentences_per_class == 0 || top_k_per_sentence == 0 {
        return Err(Error::validation(
            "sentences_per_class and top_k_per_sentence must be >= 1",
        ));
    }
    let label_name = corpus
        .catalog()
        .label_name(aspect)
        .ok_or_else(|| Error::validation(format!("unknown aspect id '{aspect}'")))?
        .to_string();
    let pool = corpus.sentences_with_aspect(aspect);
    if pool.is_empty() {
        return Err(Error::validation(format!(
            "aspect '{aspect}' has no sentences"
        )));
    }
    let take = sentences_per_class.min(pool.len());
    let picked = sampling::sample_from(rng, pool, take);

    let mask = encoder.mask_token().to_string();
    let skip: Vec<String> = TEMPLATE_SCAFFOLD
        .iter()
        .map(|s| s.to_string())
        .chain(encoder.tokenize(&label_name))
        .chain([mask.to_lowercase()])
        .collect();

    let mut per_sentence = Vec::with_capacity(take);
    for idx in picked {
        let sentence = corpus.sentence(idx);
        let prompt = build_prompt(&sentence.text, &label_name, &mask)?;
        let distribution = encoder.mlm_distribution(&prompt)?;
        let ranked = distribution.top_k(distribution.vocab().len());
        let words: Vec<String> = ranked
            .into_iter()
            .map(|(w, _)| w.to_lowercase())
            .filter(|w| !skip.contains(w))
            .take(top_k_per_sentence)
            .collect();
        per_sentence.push((sentence.id.clone(), words));
    }
    Ok(CandidateTable::from_per_sentence(per_sentence))
}

/// Removes stop words, punctuation-only and non-alphabetic tokens, and words
/// matching any token of the label name case-insensitively. Idempotent.
pub fn filter_candidates(table: &CandidateTable, label_name: &str) -> CandidateTable {
    let label_tokens: Vec<String> = label_name
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    let keep = |w: &str| -> bool {
        let lw = w.to_lowercase();
        !lw.is_empty()
            && lw.chars().all(|c| c.is_alphabetic())
            && !STOP_WORDS.contains(&lw.as_str())
            && !label_tokens.contains(&lw)
    };
    let per_sentence = table
        .per_sentence
        .iter()
        .map(|(id, words)| {
            (
                id.clone(),
                words
                    .iter()
                    .filter(|w| keep(w))
                    .map(|w| w.to_lowercase())
                    .collect(),
            )
        })
        .collect();
    CandidateTable::from_per_sentence(per_sentence)
}

/// The `m` most frequent words; ties break lexicographically.
pub fn select_top_m(table: &CandidateTable, m: usize) -> Vec<String> {
    let mut ranked: Vec<(&String, usize)> =
        table.counts.iter().map(|(w, n)| (w, *n)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(m).map(|(w, _)| w.clone()).collect()
}

/// A label name with its mined supplementary words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedLabel {
    pub aspect: String,
    pub name: String,
    pub words: Vec<String>,
    pub combined: String,
    pub m: usize,
}

/// Joins appended words onto the label name with underscores; with no words
/// the name passes through unchanged.
pub fn augment_label(aspect: &str, name: &str, words: &[String]) -> AugmentedLabel {
    let combined = if words.is_empty() {
        name.to_string()
    } else {
        format!("{name}_{}", words.join("_"))
    };
    AugmentedLabel {
        aspect: aspect.to_string(),
        name: name.to_string(),
        words: words.to_vec(),
        combined,
        m: words.len(),
    }
}

/// Persisted output of the augmentation pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentedLabelSet {
    pub m: usize,
    pub encoder_id: String,
    pub seed: u64,
    pub sentences_per_class: usize,
    #[serde(default)]
    pub stop_words_version: u32,
    pub labels: BTreeMap<String, AugmentedLabel>,
}

impl AugmentedLabelSet {
    pub fn get(&self, aspect: &str) -> Option<&AugmentedLabel> {
        self.labels.get(aspect)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("label set serializes");
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, json)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AugmentedLabelSet> {
        let content = fs::read_to_string(path).map_err(|e| {
            Error::Environment(format!("cannot read label file {}: {e}", path.display()))
        })?;
        serde_json::from_str(&content).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("label file: {e}"),
        })
    }
}

/// Runs the full pipeline for each aspect: collect, filter, select top-m,
/// and join. `top_k_per_sentence` is `max(m, 1)`.
pub fn augment_aspects(
    corpus: &Corpus,
    aspects: &[String],
    m: usize,
    sentences_per_class: usize,
    encoder: &dyn Encoder,
    seed: u64,
) -> Result<AugmentedLabelSet> {
    let mut labels = BTreeMap::new();
    for aspect in aspects {
        let name = corpus
            .catalog()
            .label_name(aspect)
            .ok_or_else(|| Error::validation(format!("unknown aspect id '{aspect}'")))?
            .to_string();
        let words = if m == 0 {
            Vec::new()
        } else {
            let mut rng = sampling::seeded_rng(seed, &format!("augment:{aspect}"));
            let table = collect_candidates(
                corpus,
                aspect,
                sentences_per_class,
                m.max(1),
                encoder,
                &mut rng,
            )?;
            let filtered = filter_candidates(&table, &name);
            select_top_m(&filtered, m)
        };
        labels.insert(aspect.clone(), augment_label(aspect, &name, &words));
    }
    Ok(AugmentedLabelSet {
        m,
        encoder_id: encoder.id(),
        seed,
        sentences_per_class,
        stop_words_version: STOP_WORDS_VERSION,
        labels,
    })
}
