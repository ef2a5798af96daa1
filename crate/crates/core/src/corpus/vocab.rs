use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{normalize, Dataset, GAP_TOKEN};

pub const PAD_TOKEN: &str = "@pad";
pub const UNK_TOKEN: &str = "@unk";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const GAP_ID: usize = 2;

const RESERVED: [&str; 3] = [PAD_TOKEN, UNK_TOKEN, GAP_TOKEN];

/// Token and answer-label index spaces.
///
/// Token ids are dense with `@pad`, `@unk` and `@gap` reserved at 0..3; the
/// rest follow first occurrence in the training data. Labels are the
/// distinct (normalized) entity strings of the training passages, also in
/// first-occurrence order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRecord", into = "VocabRecord")]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    token_ids: HashMap<String, usize>,
    labels: Vec<String>,
    label_ids: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRecord {
    tokens: Vec<String>,
    counts: Vec<u64>,
    labels: Vec<String>,
}

impl From<VocabRecord> for Vocabulary {
    fn from(r: VocabRecord) -> Self {
        Vocabulary::from_parts(r.tokens, r.counts, r.labels)
    }
}

impl From<Vocabulary> for VocabRecord {
    fn from(v: Vocabulary) -> Self {
        VocabRecord {
            tokens: v.tokens,
            counts: v.counts,
            labels: v.labels,
        }
    }
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, counts: Vec<u64>, labels: Vec<String>) -> Self {
        let token_ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let label_ids = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (normalize(l), i))
            .collect();
        Self {
            tokens,
            counts,
            token_ids,
            labels,
            label_ids,
        }
    }

    /// Builds token ids for every token seen at least `min_count` times in
    /// training passages and queries, and the label space from training
    /// passage entities.
    pub fn build(train: &Dataset, min_count: u64) -> Self {
        let mut order: Vec<&str> = Vec::new();
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for inst in train {
            for t in inst.passage.iter().chain(&inst.query) {
                let c = counts.entry(t.as_str()).or_insert_with(|| {
                    order.push(t.as_str());
                    0
                });
                *c += 1;
            }
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut token_counts = vec![0u64; RESERVED.len()];
        for t in order {
            let c = counts[t];
            if let Some(r) = RESERVED.iter().position(|r| *r == t) {
                token_counts[r] = c;
            } else if c >= min_count {
                tokens.push(t.to_string());
                token_counts.push(c);
            }
        }

        let mut labels = Vec::new();
        let mut seen = HashMap::new();
        for inst in train {
            for (key, text) in inst.distinct_entities() {
                if seen.insert(key, ()).is_none() {
                    labels.push(text);
                }
            }
        }
        Self::from_parts(tokens, token_counts, labels)
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn token_id(&self, token: &str) -> usize {
        self.token_ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains_token(&self, token: &str) -> bool {
        self.token_ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_reserved(id: usize) -> bool {
        id < RESERVED.len()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.token_id(t)).collect()
    }

    /// Label id of an entity string (matched after normalization).
    pub fn label_id(&self, entity: &str) -> Option<usize> {
        self.label_ids.get(&normalize(entity)).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[cfg(test)]
mod tests {
    use super::super::instance::fixtures::{clinical, toks};
    use super::super::{ClozeInstance, EntitySpan};
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(vec![ClozeInstance {
            id: "t".into(),
            passage: toks("a b c"),
            entities: vec![EntitySpan::new(1, 1, "b")],
            query: toks("@gap"),
            answer: "b".into(),
            candidates: None,
        }])
        .unwrap()
    }

    #[test]
    fn three_token_corpus_has_six_ids() {
        let v = Vocabulary::build(&tiny(), 1);
        assert_eq!(v.num_tokens(), 6);
        assert_eq!(v.token_id("@gap"), GAP_ID);
        assert_eq!(v.count(GAP_ID), 1);
        assert_eq!(v.num_labels(), 1);
    }

    #[test]
    fn rare_tokens_map_to_unk() {
        let v = Vocabulary::build(&Dataset::new(vec![clinical()]).unwrap(), 2);
        assert_eq!(v.token_id("aspirin"), v.token_id("aspirin"));
        assert_ne!(v.token_id("aspirin"), UNK_ID);
        assert_eq!(v.token_id("stroke"), UNK_ID);
        assert_eq!(v.token_id("never-seen"), UNK_ID);
    }

    #[test]
    fn round_trips_and_serializes() {
        let v = Vocabulary::build(&Dataset::new(vec![clinical()]).unwrap(), 1);
        for id in 0..v.num_tokens() {
            assert_eq!(v.token_id(v.token(id).unwrap()), id);
        }
        assert_eq!(v.label_id("Stroke"), Some(1));
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }
}
