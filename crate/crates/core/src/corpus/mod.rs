//! Cloze data model, readers and writers, window extraction, vocabulary,
//! dataset transforms and the synthetic task generator.

mod adapter;
mod embeddings;
mod instance;
mod io;
mod synthetic;
mod transforms;
mod vocab;
mod windows;

pub use adapter::{read_marked_jsonl, FieldMap};
pub use embeddings::{load_embeddings, EmbeddingTable};
pub use instance::{ClozeInstance, Dataset, EntitySpan, GAP_TOKEN};
pub use io::{parse_canonical, parse_cbt, read_canonical, read_cbt, write_canonical, CbtImport};
pub use synthetic::{
    generate_synthetic, InstanceMeta, SplitMeta, SyntheticConfig, SyntheticCorpus,
    SyntheticMetadata,
};
pub(crate) use transforms::instance_seed;
pub use transforms::{anonymize, cap_candidates, entity_set, filter_seen, Anonymized, EntityMap};
pub use vocab::{Vocabulary, GAP_ID, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};
pub use windows::{extract_windows, Candidate, Window, WindowSet};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("instance {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicated instance id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("instance {0}: no candidates")]
    NoCandidates(String),
    #[error("embeddings line {line}: {message}")]
    Embeddings { line: usize, message: String },
    #[error("CBT block {block}: {message}")]
    Cbt { block: usize, message: String },
    #[error("invalid synthetic config field `{field}`: {message}")]
    Config {
        field: &'static str,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Matching key for answers and entities: lowercase with whitespace runs
/// collapsed to single spaces.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}
