use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normalize, ClozeInstance, Dataset, EntitySpan};

const ANON_PREFIX: &str = "@entity_";

/// Per-instance map from `@entity_k` back to the original entity text.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EntityMap {
    pub id: String,
    pub mapping: Vec<String>,
}

impl EntityMap {
    pub fn symbol(k: usize) -> String {
        format!("{ANON_PREFIX}{k}")
    }

    /// Original text for an `@entity_k` symbol; other strings pass through.
    pub fn restore(&self, s: &str) -> String {
        s.strip_prefix(ANON_PREFIX)
            .and_then(|k| k.parse::<usize>().ok())
            .and_then(|k| self.mapping.get(k))
            .cloned()
            .unwrap_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anonymized {
    pub instance: ClozeInstance,
    pub map: EntityMap,
}

/// Replaces every distinct entity string with `@entity_k`, numbering by
/// first occurrence in the passage and restarting at 0 for each instance.
/// Each entity span collapses to a single symbol token; entity token
/// sequences in the query are replaced as well. Listed candidates that do
/// not occur in the passage are numbered after the passage entities.
pub fn anonymize(instance: &ClozeInstance) -> Anonymized {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut mapping: Vec<String> = Vec::new();
    let mut number = |key: String, text: &str, mapping: &mut Vec<String>| -> usize {
        *ids.entry(key).or_insert_with(|| {
            mapping.push(text.to_string());
            mapping.len() - 1
        })
    };

    let mut passage = Vec::with_capacity(instance.passage.len());
    let mut entities = Vec::with_capacity(instance.entities.len());
    let mut pos = 0;
    for e in instance.sorted_entities() {
        passage.extend_from_slice(&instance.passage[pos..e.start]);
        let k = number(e.key(), &e.text, &mut mapping);
        let sym = EntityMap::symbol(k);
        entities.push(EntitySpan::new(passage.len(), passage.len(), sym.clone()));
        passage.push(sym);
        pos = e.end + 1;
    }
    passage.extend_from_slice(&instance.passage[pos.min(instance.passage.len())..]);

    let candidates = instance.candidates.as_ref().map(|list| {
        list.iter()
            .map(|c| EntityMap::symbol(number(normalize(c), c, &mut mapping)))
            .collect::<Vec<_>>()
    });
    let answer = EntityMap::symbol(number(
        instance.answer_key(),
        &instance.answer,
        &mut mapping,
    ));

    // Longest entity token sequences first.
    let mut patterns: Vec<(Vec<String>, usize)> = mapping
        .iter()
        .enumerate()
        .map(|(k, text)| (normalize(text).split(' ').map(String::from).collect(), k))
        .collect();
    patterns.sort_by_key(|(p, k)| (std::cmp::Reverse(p.len()), *k));
    let mut query = Vec::with_capacity(instance.query.len());
    let mut i = 0;
    while i < instance.query.len() {
        let hit = patterns.iter().find(|(p, _)| {
            i + p.len() <= instance.query.len()
                && p.iter()
                    .zip(&instance.query[i..])
                    .all(|(a, b)| *a == b.to_lowercase())
        });
        match hit {
            Some((p, k)) => {
                query.push(EntityMap::symbol(*k));
                i += p.len();
            }
            None => {
                query.push(instance.query[i].clone());
                i += 1;
            }
        }
    }

    Anonymized {
        instance: ClozeInstance {
            id: instance.id.clone(),
            passage,
            entities,
            query,
            answer,
            candidates,
        },
        map: EntityMap {
            id: instance.id.clone(),
            mapping,
        },
    }
}

pub(crate) fn instance_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a over the id keeps per-instance streams independent of order.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    seed ^ h
}

/// Restricts the candidate pool to the answer plus `k − 1` distinct other
/// passage entities drawn uniformly (all of them when fewer exist), in a
/// seeded shuffled order.
pub fn cap_candidates(instance: &ClozeInstance, k: usize, seed: u64) -> ClozeInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(seed, &instance.id));
    let answer = instance.answer_key();
    let answer_text = instance
        .distinct_entities()
        .into_iter()
        .find(|(key, _)| *key == answer)
        .map(|(_, t)| t)
        .unwrap_or_else(|| instance.answer.clone());
    let others: Vec<String> = instance
        .distinct_entities()
        .into_iter()
        .filter(|(key, _)| *key != answer)
        .map(|(_, t)| t)
        .collect();
    let take = k.saturating_sub(1).min(others.len());
    let mut picked: Vec<String> = others.choose_multiple(&mut rng, take).cloned().collect();
    picked.push(answer_text);
    picked.shuffle(&mut rng);
    ClozeInstance {
        candidates: Some(picked),
        ..instance.clone()
    }
}

/// Normalized entity strings occurring anywhere in the dataset's passages.
pub fn entity_set(dataset: &Dataset) -> BTreeSet<String> {
    dataset
        .iter()
        .flat_map(|i| i.entities.iter().map(EntitySpan::key))
        .collect()
}

/// Keeps the test instances whose answer occurs as an entity in some
/// training passage.
pub fn filter_seen(test: &Dataset, train: &Dataset) -> Dataset {
    let seen = entity_set(train);
    let kept = test
        .iter()
        .filter(|i| seen.contains(&i.answer_key()))
        .cloned()
        .collect();
    Dataset::new(kept).expect("subset of a valid dataset")
}
