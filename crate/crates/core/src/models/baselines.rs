use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{instance_seed, normalize, ClozeInstance, EmbeddingTable};
use crate::ndcompute::ops;

/// Distinct passage entities in first-occurrence order, then listed
/// candidates absent from the passage, each with its occurrence count. Only
/// listed entries are kept when the instance has a candidate list.
fn candidate_counts(instance: &ClozeInstance) -> Vec<(String, String, usize)> {
    let mut order: Vec<(String, String, usize)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for e in instance.sorted_entities() {
        let key = e.key();
        match index.get(&key) {
            Some(&i) => order[i].2 += 1,
            None => {
                index.insert(key.clone(), order.len());
                order.push((key, e.text.clone(), 1));
            }
        }
    }
    if let Some(list) = &instance.candidates {
        for c in list {
            let key = normalize(c);
            if !index.contains_key(&key) {
                index.insert(key.clone(), order.len());
                order.push((key, c.clone(), 0));
            }
        }
        let listed: Vec<String> = list.iter().map(|c| normalize(c)).collect();
        order.retain(|(k, _, _)| listed.contains(k));
    }
    order
}

/// Uniform pick among the candidates (or distinct passage entities),
/// seeded per instance.
pub fn baseline_random(instance: &ClozeInstance, seed: u64) -> Option<String> {
    let pool = candidate_counts(instance);
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(seed, &instance.id));
    pool.choose(&mut rng).map(|(_, text, _)| text.clone())
}

/// Most frequent passage entity; ties go to the first occurring.
pub fn baseline_maxfreq(instance: &ClozeInstance) -> Option<String> {
    candidate_counts(instance)
        .into_iter()
        .reduce(|best, c| if c.2 > best.2 { c } else { best })
        .map(|(_, text, _)| text)
}

fn mean_vector<'a>(tokens: impl Iterator<Item = &'a String>, emb: &EmbeddingTable) -> Vec<f64> {
    let rows: Vec<&[f64]> = tokens.filter_map(|t| emb.get(t)).collect();
    if rows.is_empty() {
        vec![0.0; emb.dim()]
    } else {
        ops::mean_rows(&rows).expect("non-empty rows")
    }
}

/// Candidate of the passage window whose mean word vector is most
/// cosine-similar to the query window's. Tokens without a vector are
/// ignored; windows of unlisted candidates are skipped when a list exists.
pub fn baseline_simwindow(
    instance: &ClozeInstance,
    embeddings: &EmbeddingTable,
    radius: usize,
) -> Option<String> {
    let gap = instance.gap_position()?;
    let around = |tokens: &[String], start: usize, end: usize| {
        let lo = start.saturating_sub(radius);
        let hi = (end + radius).min(tokens.len() - 1);
        mean_vector(tokens[lo..=hi].iter(), embeddings)
    };
    let q = around(&instance.query, gap, gap);
    let listed: Option<Vec<String>> = instance
        .candidates
        .as_ref()
        .map(|l| l.iter().map(|c| normalize(c)).collect());
    let entities = instance.sorted_entities();
    let allowed: Vec<_> = entities
        .iter()
        .filter(|e| listed.as_ref().is_none_or(|l| l.contains(&e.key())))
        .collect();
    let pool = if allowed.is_empty() {
        entities.iter().collect()
    } else {
        allowed
    };
    let mut best: Option<(f64, &str)> = None;
    for e in pool {
        let sim = ops::cosine(&q, &around(&instance.passage, e.start, e.end)).ok()?;
        if best.is_none_or(|(s, _)| sim > s) {
            best = Some((sim, &e.text));
        }
    }
    best.map(|(_, text)| text.to_string())
}
