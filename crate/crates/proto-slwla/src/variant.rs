//! Model variants behind a common trait, registered by name and selected at
//! runtime from config or the CLI: the full pipeline plus its ablations.

use crate::augment::AugmentedLabelSet;
use crate::error::{Error, Result};
use crate::forward::ForwardOptions;

/// What a variant demands of the augmented-label file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelRequirement {
    /// Labels ignored entirely.
    Unused,
    /// Needs a label file with m = 0 (plain label names).
    ZeroWidth,
    /// Needs a label file with m >= 1.
    Augmented,
}

/// One interchangeable model variant.
pub trait Variant: Send + Sync {
    /// Registry name, as written in configs and on the CLI.
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    /// The attention stages this variant runs.
    fn forward_options(&self) -> ForwardOptions;

    fn label_requirement(&self) -> LabelRequirement;

    /// Checks the label file against this variant's requirement, before any
    /// compute happens.
    fn validate_labels(&self, labels: Option<&AugmentedLabelSet>) -> Result<()> {
        match (self.label_requirement(), labels) {
            (LabelRequirement::Unused, _) => Ok(()),
            (LabelRequirement::ZeroWidth, Some(set)) if set.m == 0 => Ok(()),
            (LabelRequirement::ZeroWidth, Some(set)) => Err(Error::config(format!(
                "variant '{}' needs a label file with m = 0, got m = {}",
                self.name(),
                set.m
            ))),
            (LabelRequirement::Augmented, Some(set)) if set.m >= 1 => Ok(()),
            (LabelRequirement::Augmented, Some(set)) => Err(Error::config(format!(
                "variant '{}' needs a label file with m >= 1, got m = {}",
                self.name(),
                set.m
            ))),
            (_, None) => Err(Error::config(format!(
                "variant '{}' needs an augmented-label file",
                self.name()
            ))),
        }
    }

    /// Whether the forward pass consumes label embeddings.
    fn uses_labels(&self) -> bool {
        self.label_requirement() != LabelRequirement::Unused
    }
}

/// Plain prototypical network: no attention anywhere, mean prototypes over
/// masked-mean sentence embeddings.
struct PlainPrototype;

impl Variant for PlainPrototype {
    fn name(&self) -> &'static str {
        "proto"
    }

    fn description(&self) -> &'static str {
        "plain prototypical network (no attention)"
    }

    fn forward_options(&self) -> ForwardOptions {
        ForwardOptions::plain_prototype()
    }

    fn label_requirement(&self) -> LabelRequirement {
        LabelRequirement::Unused
    }
}

/// Word-level attention without label guidance, plus sentence-level
/// weighting and query attention.
struct SentenceWeighted;

impl Variant for SentenceWeighted {
    fn name(&self) -> &'static str {
        "slw"
    }

    fn description(&self) -> &'static str {
        "sentence-level weighting without label guidance"
    }

    fn forward_options(&self) -> ForwardOptions {
        ForwardOptions::sentence_weighted_only()
    }

    fn label_requirement(&self) -> LabelRequirement {
        LabelRequirement::Unused
    }
}

/// Full pipeline guided by plain label names (m = 0).
struct LabelNameGuided;

impl Variant for LabelNameGuided {
    fn name(&self) -> &'static str {
        "slw-las"
    }

    fn description(&self) -> &'static str {
        "sentence-level weighting with plain label-name guidance (m = 0)"
    }

    fn forward_options(&self) -> ForwardOptions {
        ForwardOptions::full()
    }

    fn label_requirement(&self) -> LabelRequirement {
        LabelRequirement::ZeroWidth
    }
}

/// Full pipeline guided by augmented label names (m >= 1).
struct LabelAugmented;

impl Variant for LabelAugmented {
    fn name(&self) -> &'static str {
        "slwla"
    }

    fn description(&self) -> &'static str {
        "sentence-level weighting with augmented label guidance (m >= 1)"
    }

    fn forward_options(&self) -> ForwardOptions {
        ForwardOptions::full()
    }

    fn label_requirement(&self) -> LabelRequirement {
        LabelRequirement::Augmented
    }
}

/// All registered variants.
pub fn builtin_variants() -> Vec<Box<dyn Variant>> {
    vec![
        Box::new(PlainPrototype),
        Box::new(SentenceWeighted),
        Box::new(LabelNameGuided),
        Box::new(LabelAugmented),
    ]
}

pub fn variant_names() -> Vec<&'static str> {
    builtin_variants().iter().map(|v| v.name()).collect()
}

/// Looks a variant up by registry name.
pub fn create_variant(name: &str) -> Result<Box<dyn Variant>> {
    builtin_variants()
        .into_iter()
        .find(|v| v.name() == name)
        .ok_or_else(|| {
            Error::config(format!(
                "unknown ablation '{name}' (known: {})",
                variant_names().join(", ")
            ))
        })
}
