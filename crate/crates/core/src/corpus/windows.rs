use std::collections::HashMap;

use serde::Serialize;

use super::{normalize, ClozeInstance, CorpusError, Vocabulary, PAD_ID};

/// One memory slot: the tokens around an entity occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Window {
    pub tokens: Vec<usize>,
    pub entity_tokens: Vec<usize>,
    /// Index into [`WindowSet::candidates`].
    pub candidate: usize,
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Candidate {
    /// Original text of the first occurrence.
    pub text: String,
    /// Normalized matching key.
    pub key: String,
    /// Answer-space label, if the entity is part of the training label space.
    pub label: Option<usize>,
    /// False when the instance carries a candidate list that excludes it.
    pub allowed: bool,
}

/// Per-instance memory: windows in document order plus the query window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    pub query: Vec<usize>,
    /// Distinct passage entities in first-occurrence order, followed by
    /// listed candidates that never occur in the passage.
    pub candidates: Vec<Candidate>,
}

impl WindowSet {
    pub fn candidate_index(&self, entity: &str) -> Option<usize> {
        let key = normalize(entity);
        self.candidates.iter().position(|c| c.key == key)
    }

    /// Candidate index of every window, in window order.
    pub fn window_candidates(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.candidate).collect()
    }
}

fn padded(tokens: &[usize], from: isize, to: isize) -> impl Iterator<Item = usize> + '_ {
    (from..=to).map(move |i| {
        if i < 0 || i as usize >= tokens.len() {
            PAD_ID
        } else {
            tokens[i as usize]
        }
    })
}

/// Builds the memory for one instance: `radius` tokens left of each entity
/// span, the entity tokens, `radius` tokens right, padded with `@pad` at the
/// passage edges. Only the first `memory_size` occurrences in document order
/// are kept.
pub fn extract_windows(
    instance: &ClozeInstance,
    radius: usize,
    memory_size: usize,
    vocab: &Vocabulary,
) -> Result<WindowSet, CorpusError> {
    let entities = instance.sorted_entities();
    if entities.is_empty() {
        return Err(CorpusError::NoCandidates(instance.id.clone()));
    }
    let gap = instance
        .gap_position()
        .ok_or_else(|| CorpusError::Invalid {
            id: instance.id.clone(),
            reason: "query has no gap".into(),
        })?;
    let allowed: Option<Vec<String>> = instance
        .candidates
        .as_ref()
        .map(|c| c.iter().map(|s| normalize(s)).collect());

    let mut candidates: Vec<Candidate> = Vec::new();
    let mut by_key: HashMap<String, usize> = HashMap::new();
    let mut add = |key: String, text: &str, candidates: &mut Vec<Candidate>| -> usize {
        *by_key.entry(key.clone()).or_insert_with(|| {
            candidates.push(Candidate {
                text: text.to_string(),
                label: vocab.label_id(&key),
                allowed: allowed.as_ref().is_none_or(|a| a.contains(&key)),
                key,
            });
            candidates.len() - 1
        })
    };

    let passage = vocab.encode(&instance.passage);
    let r = radius as isize;
    let mut windows = Vec::with_capacity(entities.len().min(memory_size));
    for e in &entities {
        let candidate = add(e.key(), &e.text, &mut candidates);
        if windows.len() < memory_size {
            windows.push(Window {
                tokens: padded(&passage, e.start as isize - r, e.end as isize + r).collect(),
                entity_tokens: passage[e.start..=e.end].to_vec(),
                candidate,
                span: (e.start, e.end),
            });
        }
    }
    if let Some(list) = &instance.candidates {
        for c in list {
            add(normalize(c), c, &mut candidates);
        }
    }

    let query = vocab.encode(&instance.query);
    let g = gap as isize;
    Ok(WindowSet {
        windows,
        query: padded(&query, g - r, g + r).collect(),
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::super::instance::fixtures::{clinical, toks};
    use super::super::{Dataset, EntitySpan, GAP_TOKEN};
    use super::*;
    use proptest::prelude::*;

    fn ten_tokens(entities: Vec<EntitySpan>) -> (ClozeInstance, Vocabulary) {
        let inst = ClozeInstance {
            id: "w".into(),
            passage: (0..10).map(|i| format!("t{i}")).collect(),
            entities,
            query: toks("x @gap y"),
            answer: "t4".into(),
            candidates: None,
        };
        let train = ClozeInstance {
            entities: vec![EntitySpan::new(4, 4, "t4")],
            ..inst.clone()
        };
        let v = Vocabulary::build(&Dataset::new(vec![train]).unwrap(), 1);
        (inst, v)
    }

    fn names(v: &Vocabulary, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| v.token(i).unwrap().to_string())
            .collect()
    }

    #[test]
    fn five_token_window_around_single_token_entity() {
        let (inst, v) = ten_tokens(vec![EntitySpan::new(4, 4, "t4")]);
        let ws = extract_windows(&inst, 2, 300, &v).unwrap();
        assert_eq!(names(&v, &ws.windows[0].tokens), toks("t2 t3 t4 t5 t6"));
        assert_eq!(names(&v, &ws.query), toks("@pad x @gap y @pad"));
    }

    #[test]
    fn boundary_windows_are_padded() {
        let (mut inst, v) = ten_tokens(vec![
            EntitySpan::new(0, 0, "t0"),
            EntitySpan::new(4, 4, "t4"),
        ]);
        inst.entities.push(EntitySpan::new(9, 9, "t9"));
        let ws = extract_windows(&inst, 2, 300, &v).unwrap();
        assert_eq!(names(&v, &ws.windows[0].tokens), toks("@pad @pad t0 t1 t2"));
        assert_eq!(names(&v, &ws.windows[2].tokens), toks("t7 t8 t9 @pad @pad"));
    }

    #[test]
    fn multiword_entity_keeps_all_tokens() {
        let (inst, v) = ten_tokens(vec![EntitySpan::new(3, 5, "t3 t4 t5")]);
        let ws = extract_windows(&inst, 1, 300, &v).unwrap();
        assert_eq!(names(&v, &ws.windows[0].tokens), toks("t2 t3 t4 t5 t6"));
        assert_eq!(names(&v, &ws.windows[0].entity_tokens), toks("t3 t4 t5"));
    }

    #[test]
    fn truncates_to_first_memory_slots() {
        let n = 350;
        let inst = ClozeInstance {
            id: "big".into(),
            passage: (0..n).map(|i| format!("e{i}")).collect(),
            entities: (0..n)
                .rev()
                .map(|i| EntitySpan::new(i, i, format!("e{i}")))
                .collect(),
            query: vec![GAP_TOKEN.into()],
            answer: "e0".into(),
            candidates: None,
        };
        let v = Vocabulary::build(&Dataset::new(vec![inst.clone()]).unwrap(), 1);
        let ws = extract_windows(&inst, 2, 300, &v).unwrap();
        assert_eq!(ws.windows.len(), 300);
        assert!(ws.windows.iter().enumerate().all(|(i, w)| w.span == (i, i)));
        assert_eq!(ws.candidates.len(), n);
    }

    #[test]
    fn no_entities_is_error() {
        let mut inst = clinical();
        inst.entities.clear();
        let v = Vocabulary::build(&Dataset::new(vec![clinical()]).unwrap(), 1);
        assert!(matches!(
            extract_windows(&inst, 2, 300, &v),
            Err(CorpusError::NoCandidates(_))
        ));
    }

    #[test]
    fn candidates_share_labels_and_respect_lists() {
        let v = Vocabulary::build(&Dataset::new(vec![clinical()]).unwrap(), 1);
        let mut inst = clinical();
        inst.candidates = Some(vec!["stroke".into(), "fever".into()]);
        let ws = extract_windows(&inst, 2, 300, &v).unwrap();
        assert_eq!(ws.window_candidates(), vec![0, 1, 0]);
        let keys: Vec<&str> = ws.candidates.iter().map(|c| c.key.as_str()).collect();
        assert_eq!(keys, vec!["aspirin", "stroke", "fever"]);
        let allowed: Vec<bool> = ws.candidates.iter().map(|c| c.allowed).collect();
        assert_eq!(allowed, vec![false, true, true]);
        assert_eq!(ws.candidates[2].label, None);
        assert_eq!(ws.candidate_index("STROKE"), Some(1));
    }

    proptest! {
        #[test]
        fn windows_ordered_and_bounded(
            starts in proptest::collection::btree_set(0usize..60, 1..40),
            memory in 1usize..50,
            radius in 0usize..4,
        ) {
            let starts: Vec<usize> = starts.into_iter().collect();
            let inst = ClozeInstance {
                id: "p".into(),
                passage: (0..60).map(|i| format!("w{}", i % 7)).collect(),
                entities: starts.iter().rev().map(|&s| EntitySpan::new(s, s, format!("w{}", s % 7))).collect(),
                query: toks("a @gap b"),
                answer: format!("w{}", starts[0] % 7),
                candidates: None,
            };
            let v = Vocabulary::build(&Dataset::new(vec![inst.clone()]).unwrap(), 1);
            let ws = extract_windows(&inst, radius, memory, &v).unwrap();
            prop_assert!(ws.windows.len() <= memory);
            prop_assert!(ws.windows.windows(2).all(|p| p[0].span.0 <= p[1].span.0));
            for w in &ws.windows {
                prop_assert_eq!(w.tokens.len(), 2 * radius + 1);
                prop_assert!(ws.candidates[w.candidate].label.is_some());
            }
        }
    }
}
