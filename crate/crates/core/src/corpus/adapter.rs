//! Adapter for JSON Lines corpora that mark entities inline in the text,
//! as CliCR does with `BEG__heart failure__END`. Field names and markers are
//! configurable; nested fields use `/`-separated paths.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{normalize, ClozeInstance, CorpusError, Dataset, EntitySpan, GAP_TOKEN};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub id: String,
    pub passage: String,
    pub query: String,
    pub answer: String,
    pub gap_marker: String,
    pub entity_open: String,
    pub entity_close: String,
    pub lowercase: bool,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            id: "id".into(),
            passage: "context".into(),
            query: "query".into(),
            answer: "answer".into(),
            gap_marker: "@placeholder".into(),
            entity_open: "BEG__".into(),
            entity_close: "__END".into(),
            lowercase: true,
        }
    }
}

fn field<'a>(v: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('/').try_fold(v, |v, k| match v {
        Value::Array(a) => a.get(k.parse::<usize>().ok()?),
        _ => v.get(k),
    })
}

impl FieldMap {
    fn token(&self, t: &str) -> String {
        if self.lowercase {
            t.to_lowercase()
        } else {
            t.to_string()
        }
    }

    /// Tokenizes marked text, returning tokens and entity spans.
    fn parse_marked(&self, text: &str) -> (Vec<String>, Vec<EntitySpan>) {
        let mut tokens = Vec::new();
        let mut spans = Vec::new();
        let mut open: Option<usize> = None;
        for raw in text.split_whitespace() {
            let mut t = raw;
            if let Some(rest) = t.strip_prefix(self.entity_open.as_str()) {
                open = Some(tokens.len());
                t = rest;
            }
            let closes = t.ends_with(self.entity_close.as_str());
            if closes {
                t = &t[..t.len() - self.entity_close.len()];
            }
            if !t.is_empty() {
                tokens.push(self.token(t));
            }
            if closes {
                if let Some(start) = open.take() {
                    if tokens.len() > start {
                        let end = tokens.len() - 1;
                        spans.push(EntitySpan::new(start, end, tokens[start..=end].join(" ")));
                    }
                }
            }
        }
        (tokens, spans)
    }

    pub fn convert(&self, record: &Value, line: usize) -> Result<ClozeInstance, CorpusError> {
        let get = |path: &str| -> Result<String, CorpusError> {
            match field(record, path) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(Value::Number(n)) => Ok(n.to_string()),
                _ => Err(CorpusError::Parse {
                    line,
                    message: format!("missing string field `{path}`"),
                }),
            }
        };
        let (passage, entities) = self.parse_marked(&get(&self.passage)?);
        let query = get(&self.query)?
            .split_whitespace()
            .map(|t| {
                let t = t
                    .trim_start_matches(self.entity_open.as_str())
                    .trim_end_matches(self.entity_close.as_str());
                if t == self.gap_marker {
                    GAP_TOKEN.to_string()
                } else {
                    self.token(t)
                }
            })
            .collect();
        let answer = get(&self.answer)?;
        let answer = self.parse_marked(&answer).0.join(" ");
        Ok(ClozeInstance {
            id: get(&self.id)?,
            passage,
            entities,
            query,
            answer: normalize(&answer),
            candidates: None,
        })
    }
}

/// Reads a marked-entity JSONL file. Instances whose answer is not a passage
/// entity are skipped and their ids returned.
pub fn read_marked_jsonl(
    path: impl AsRef<Path>,
    map: &FieldMap,
) -> Result<(Dataset, Vec<String>), CorpusError> {
    let text = fs::read_to_string(path)?;
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let inst = map.convert(&value, i + 1)?;
        match inst.validate() {
            Ok(()) => kept.push(inst),
            Err(_) => skipped.push(inst.id),
        }
    }
    Ok((Dataset::new(kept)?, skipped))
}
