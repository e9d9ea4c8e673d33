//! Corpus loading, aspect catalog, disjoint splits, and length statistics.
//!
//! The corpus file is line-delimited JSON, one record per line:
//! `{"id": "...", "text": "...", "aspects": ["...", ...]}`. Sentences are
//! stored with a whitespace pre-split used for statistics; model tokenization
//! is delegated to the encoder.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::shuffled;

/// A review sentence with its set of gold aspect labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub id: String,
    pub text: String,
    /// Whitespace pre-split, used for corpus statistics only.
    pub tokens: Vec<String>,
    pub aspects: BTreeSet<String>,
}

impl LabeledSentence {
    /// Token count before any padding.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Which disjoint pool an aspect belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Valid, SplitName::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<SplitName> {
        match s {
            "train" => Ok(SplitName::Train),
            "valid" | "validation" => Ok(SplitName::Valid),
            "test" => Ok(SplitName::Test),
            other => Err(Error::config(format!("unknown split name '{other}'"))),
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Aspect id -> label-name text, plus the optional train/valid/test split.
#[derive(Debug, Clone, Default)]
pub struct AspectCatalog {
    names: BTreeMap<String, String>,
    split: BTreeMap<String, SplitName>,
}

impl AspectCatalog {
    pub fn contains(&self, aspect: &str) -> bool {
        self.names.contains_key(aspect)
    }

    pub fn label_name(&self, aspect: &str) -> Option<&str> {
        self.names.get(aspect).map(|s| s.as_str())
    }

    /// All aspect ids, sorted.
    pub fn aspects(&self) -> impl Iterator<Item = &str> {
        self.names.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn split_of(&self, aspect: &str) -> Option<SplitName> {
        self.split.get(aspect).copied()
    }

    /// Aspect ids assigned to `split`, sorted.
    pub fn split_members(&self, split: SplitName) -> Vec<String> {
        self.split
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(a, _)| a.clone())
            .collect()
    }

    pub fn has_split(&self) -> bool {
        !self.split.is_empty()
    }
}

/// Per-length mean gold-aspect counts over a corpus sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Sentence length -> (mean aspect count, sample size in the bucket).
    pub buckets: BTreeMap<usize, LengthBucket>,
    pub sample_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LengthBucket {
    pub mean_aspects: f64,
    pub samples: usize,
}

/// An immutable, validated corpus with its aspect catalog.
#[derive(Debug, Clone)]
pub struct Corpus {
    sentences: Vec<LabeledSentence>,
    catalog: AspectCatalog,
    by_aspect: BTreeMap<String, Vec<usize>>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    aspects: Vec<String>,
}

/// Serializable corpus record, also used when writing synthetic corpora.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    pub aspects: Vec<String>,
}

impl Corpus {
    /// Builds a corpus from records, validating every sentence. Aspect ids
    /// are interned into the catalog with the id as the label-name text.
    pub fn from_records(records: Vec<CorpusRecord>) -> Result<Corpus> {
        let mut sentences = Vec::with_capacity(records.len());
        let mut seen = BTreeSet::new();
        for r in records {
            if r.id.is_empty() {
                return Err(Error::validation("sentence with empty id"));
            }
            if !seen.insert(r.id.clone()) {
                return Err(Error::validation(format!("duplicate sentence id '{}'", r.id)));
            }
            let tokens: Vec<String> = r.text.split_whitespace().map(str::to_string).collect();
            if tokens.is_empty() {
                return Err(Error::validation(format!(
                    "sentence '{}' has no tokens",
                    r.id
                )));
            }
            let aspects: BTreeSet<String> = r.aspects.into_iter().collect();
            if aspects.is_empty() {
                return Err(Error::validation(format!(
                    "sentence '{}' has an empty aspect set",
                    r.id
                )));
            }
            if aspects.iter().any(|a| a.is_empty()) {
                return Err(Error::validation(format!(
                    "sentence '{}' has an empty aspect id",
                    r.id
                )));
            }
            sentences.push(LabeledSentence {
                id: r.id,
                text: r.text,
                tokens,
                aspects,
            });
        }
        sentences.sort_by(|a, b| a.id.cmp(&b.id));

        let mut names = BTreeMap::new();
        let mut by_aspect: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (idx, s) in sentences.iter().enumerate() {
            for a in &s.aspects {
                names.entry(a.clone()).or_insert_with(|| a.clone());
                by_aspect.entry(a.clone()).or_default().push(idx);
            }
        }
        Ok(Corpus {
            sentences,
            catalog: AspectCatalog {
                names,
                split: BTreeMap::new(),
            },
            by_aspect,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentence(&self, idx: usize) -> &LabeledSentence {
        &self.sentences[idx]
    }

    pub fn sentences(&self) -> &[LabeledSentence] {
        &self.sentences
    }

    pub fn catalog(&self) -> &AspectCatalog {
        &self.catalog
    }

    /// Indices of sentences whose gold aspects contain `aspect`, in corpus
    /// (id-sorted) order.
    pub fn sentences_with_aspect(&self, aspect: &str) -> &[usize] {
        self.by_aspect.get(aspect).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Installs a split assignment, validating ids and disjointness.
    pub fn apply_splits(&mut self, splits: &BTreeMap<String, Vec<String>>) -> Result<()> {
        let mut assignment: BTreeMap<String, SplitName> = BTreeMap::new();
        for (name, members) in splits {
            let split = SplitName::parse(name)?;
            for aspect in members {
                if !self.catalog.contains(aspect) {
                    return Err(Error::validation(format!(
                        "split file references unknown aspect id '{aspect}'"
                    )));
                }
                if assignment.insert(aspect.clone(), split).is_some() {
                    return Err(Error::validation(format!(
                        "aspect '{aspect}' appears in more than one split"
                    )));
                }
            }
        }
        self.catalog.split = assignment;
        Ok(())
    }
}

/// Loads and validates a corpus from a JSONL file.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let content = fs::read_to_string(path)
        .map_err(|e| Error::Environment(format!("cannot read corpus {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line_num = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_num,
            message: e.to_string(),
        })?;
        if raw.aspects.is_empty() {
            return Err(Error::validation(format!(
                "line {line_num}: sentence '{}' has an empty aspect set",
                raw.id
            )));
        }
        records.push(CorpusRecord {
            id: raw.id,
            text: raw.text,
            aspects: raw.aspects,
        });
    }
    Corpus::from_records(records)
}

/// Assigns aspects to disjoint train/valid/test pools of the requested sizes,
/// deterministically in `seed`.
pub fn split_aspects(
    catalog: &AspectCatalog,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<AspectCatalog> {
    let (n_train, n_valid, n_test) = counts;
    let total = n_train + n_valid + n_test;
    if total > catalog.len() {
        return Err(Error::config(format!(
            "split counts {n_train}+{n_valid}+{n_test} exceed catalog size {}",
            catalog.len()
        )));
    }
    if n_train == 0 || n_valid == 0 || n_test == 0 {
        return Err(Error::config("every split count must be positive"));
    }
    let aspects: Vec<String> = catalog.aspects().map(str::to_string).collect();
    let mut rng: ChaCha8Rng = crate::sampling::seeded_rng(seed, "split-aspects");
    let order = shuffled(&mut rng, aspects.len());

    let mut split = BTreeMap::new();
    for (pos, &idx) in order.iter().take(total).enumerate() {
        let name = if pos < n_train {
            SplitName::Train
        } else if pos < n_train + n_valid {
            SplitName::Valid
        } else {
            SplitName::Test
        };
        split.insert(aspects[idx].clone(), name);
    }
    Ok(AspectCatalog {
        names: catalog.names.clone(),
        split,
    })
}

/// Per-length mean aspect counts over a random sample of the corpus.
pub fn corpus_stats(corpus: &Corpus, sample_size: usize, rng: &mut ChaCha8Rng) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::validation("corpus is empty"));
    }
    if sample_size == 0 || sample_size > corpus.len() {
        return Err(Error::validation(format!(
            "sample size {sample_size} outside 1..={}",
            corpus.len()
        )));
    }
    let picked = crate::sampling::sample_indices(rng, corpus.len(), sample_size);
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for idx in picked {
        let s = corpus.sentence(idx);
        let entry = sums.entry(s.len()).or_insert((0.0, 0));
        entry.0 += s.aspects.len() as f64;
        entry.1 += 1;
    }
    let buckets = sums
        .into_iter()
        .map(|(len, (sum, n))| {
            (
                len,
                LengthBucket {
                    mean_aspects: sum / n as f64,
                    samples: n,
                },
            )
        })
        .collect();
    Ok(CorpusStats {
        buckets,
        sample_size,
    })
}

/// Split assignment of a catalog as a name -> members map.
pub fn split_map(catalog: &AspectCatalog) -> BTreeMap<String, Vec<String>> {
    SplitName::ALL
        .iter()
        .map(|s| (s.as_str().to_string(), catalog.split_members(*s)))
        .collect()
}

/// Reads a split file: JSON object mapping split name to a list of aspect ids.
pub fn load_split_file(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let content = fs::read_to_string(path)
        .map_err(|e| Error::Environment(format!("cannot read split file {}: {e}", path.display())))?;
    serde_json::from_str(&content).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("split file: {e}"),
    })
}

/// Writes a split assignment as a split file.
pub fn save_split_file(path: &Path, catalog: &AspectCatalog) -> Result<()> {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for split in SplitName::ALL {
        map.insert(split.as_str().to_string(), catalog.split_members(split));
    }
    let json = serde_json::to_string_pretty(&map).expect("split map serializes");
    fs::write(path, json)?;
    Ok(())
}
