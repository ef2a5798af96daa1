use std::collections::HashSet;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use super::{normalize, CorpusError};

/// Placeholder token marking the gap in a query.
pub const GAP_TOKEN: &str = "@gap";

/// Entity mention covering passage tokens `start..=end`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, String)", into = "(usize, usize, String)")]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, text: impl Into<String>) -> Self {
        Self {
            start,
            end,
            text: text.into(),
        }
    }

    pub fn key(&self) -> String {
        normalize(&self.text)
    }
}

impl From<(usize, usize, String)> for EntitySpan {
    fn from((start, end, text): (usize, usize, String)) -> Self {
        Self { start, end, text }
    }
}

impl From<EntitySpan> for (usize, usize, String) {
    fn from(s: EntitySpan) -> Self {
        (s.start, s.end, s.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClozeInstance {
    pub id: String,
    pub passage: Vec<String>,
    pub entities: Vec<EntitySpan>,
    pub query: Vec<String>,
    pub answer: String,
    #[serde(default)]
    pub candidates: Option<Vec<String>>,
}

impl ClozeInstance {
    pub fn gap_position(&self) -> Option<usize> {
        self.query.iter().position(|t| t == GAP_TOKEN)
    }

    /// Entities ordered by span start.
    pub fn sorted_entities(&self) -> Vec<&EntitySpan> {
        let mut v: Vec<&EntitySpan> = self.entities.iter().collect();
        v.sort_by_key(|e| (e.start, e.end));
        v
    }

    /// Distinct entity keys in order of first occurrence, with the original
    /// text of that first occurrence.
    pub fn distinct_entities(&self) -> Vec<(String, String)> {
        let mut seen = HashSet::new();
        self.sorted_entities()
            .into_iter()
            .filter(|e| seen.insert(e.key()))
            .map(|e| (e.key(), e.text.clone()))
            .collect()
    }

    pub fn answer_key(&self) -> String {
        normalize(&self.answer)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: String| CorpusError::Invalid {
            id: self.id.clone(),
            reason,
        };
        let gaps = self.query.iter().filter(|t| *t == GAP_TOKEN).count();
        if gaps != 1 {
            return Err(invalid(format!(
                "query must contain exactly one {GAP_TOKEN} token, found {gaps}"
            )));
        }
        let mut prev_end: Option<usize> = None;
        for e in self.sorted_entities() {
            if e.start > e.end || e.end >= self.passage.len() {
                return Err(invalid(format!(
                    "entity span ({}, {}) outside passage of {} tokens",
                    e.start,
                    e.end,
                    self.passage.len()
                )));
            }
            if prev_end.is_some_and(|p| e.start <= p) {
                return Err(invalid(format!(
                    "entity span ({}, {}) overlaps another",
                    e.start, e.end
                )));
            }
            if e.key().is_empty() {
                return Err(invalid("empty entity string".into()));
            }
            prev_end = Some(e.end);
        }
        let answer = self.answer_key();
        if !self.entities.iter().any(|e| e.key() == answer) {
            return Err(invalid(format!(
                "answer {:?} is not a passage entity",
                self.answer
            )));
        }
        if let Some(c) = &self.candidates {
            if !c.iter().any(|c| normalize(c) == answer) {
                return Err(invalid(format!(
                    "answer {:?} missing from candidates",
                    self.answer
                )));
            }
        }
        Ok(())
    }
}

/// Validated collection of instances with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    instances: Vec<ClozeInstance>,
}

impl Dataset {
    pub fn new(instances: Vec<ClozeInstance>) -> Result<Self, CorpusError> {
        let mut ids = HashSet::new();
        for (i, inst) in instances.iter().enumerate() {
            inst.validate()?;
            if !ids.insert(inst.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    id: inst.id.clone(),
                });
            }
        }
        Ok(Self { instances })
    }

    pub fn instances(&self) -> &[ClozeInstance] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<ClozeInstance> {
        self.instances
    }

    pub fn get(&self, id: &str) -> Option<&ClozeInstance> {
        self.instances.iter().find(|i| i.id == id)
    }
}

impl Deref for Dataset {
    type Target = [ClozeInstance];

    fn deref(&self) -> &Self::Target {
        &self.instances
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a ClozeInstance;
    type IntoIter = std::slice::Iter<'a, ClozeInstance>;

    fn into_iter(self) -> Self::IntoIter {
        self.instances.iter()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    /// `the patient got aspirin after a stroke ; aspirin helped`
    pub fn clinical() -> ClozeInstance {
        ClozeInstance {
            id: "c1".into(),
            passage: toks("the patient got aspirin after a stroke ; aspirin helped"),
            entities: vec![
                EntitySpan::new(3, 3, "aspirin"),
                EntitySpan::new(6, 6, "stroke"),
                EntitySpan::new(8, 8, "aspirin"),
            ],
            query: toks("treated with @gap after admission"),
            answer: "stroke".into(),
            candidates: None,
        }
    }
}
