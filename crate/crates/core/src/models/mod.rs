//! The window memory network, its output-head variants, the query-only
//! classifier and the non-neural baselines.

mod baselines;
mod memnet;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusError;
use crate::ndcompute::ComputeError;

pub use baselines::{baseline_maxfreq, baseline_random, baseline_simwindow};
pub use memnet::{
    attention_feature, build_vocab, pointer_predict, Architecture, ForwardTrace, Graph, MemNet,
    Output, Prepared,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Classifier over the answer space from `[o; q; o+q; o⊙q]`.
    #[default]
    Vanilla,
    /// Predicts the candidate of the most attended window.
    Pointer,
    /// Vanilla features plus a one-hot of the most attended candidate.
    AttentionFeat,
    /// Classifier over the one-hot attention feature alone.
    AttentionFeatOnly,
    /// Vanilla head fed with the single most attended window.
    BestWindow,
    /// Classifier over the query encoding alone; ignores the passage.
    QueryOnly,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Vanilla,
        Variant::Pointer,
        Variant::AttentionFeat,
        Variant::AttentionFeatOnly,
        Variant::BestWindow,
        Variant::QueryOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Pointer => "pointer",
            Variant::AttentionFeat => "attention_feat",
            Variant::AttentionFeatOnly => "attention_feat_only",
            Variant::BestWindow => "best_window",
            Variant::QueryOnly => "query_only",
        }
    }

    /// Whether the variant has a classification layer `W`, `b`.
    pub fn has_head(self) -> bool {
        self != Variant::Pointer
    }

    /// Whether the variant reads the passage windows.
    pub fn uses_memory(self) -> bool {
        self != Variant::QueryOnly
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Replace entities with per-instance `@entity_k` symbols before reading.
    pub anonymized: bool,
    pub hops: usize,
    pub dim: usize,
    /// Context tokens on each side of an entity in a window.
    pub radius: usize,
    /// Maximum windows per instance, first occurrences kept.
    pub memory_size: usize,
    /// Output-side window encoding covers only the entity tokens.
    pub key_value: bool,
    /// Also initialize the output-side embeddings from pretrained vectors.
    pub pretrained_output: bool,
    /// Minimum training count for a token to get its own embedding row.
    pub min_count: u64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Vanilla,
            anonymized: false,
            hops: 1,
            dim: 50,
            radius: 2,
            memory_size: 300,
            key_value: false,
            pretrained_output: false,
            min_count: 1,
            seed: 13,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hops == 0 {
            return Err(ModelError::Config("hops must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(ModelError::Config("dim must be positive".into()));
        }
        if self.memory_size == 0 {
            return Err(ModelError::Config("memory_size must be positive".into()));
        }
        if self.min_count == 0 {
            return Err(ModelError::Config("min_count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("variant {variant} needs a non-empty answer space")]
    EmptyLabelSpace { variant: Variant },
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("embedding dimension {got} does not match model dimension {expected}")]
    EmbeddingDim { expected: usize, got: usize },
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}
