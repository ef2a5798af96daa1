//! Exact match, token F1 and accuracy, seen/unseen breakdowns, attention
//! statistics and run comparison.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{entity_set, normalize, Dataset};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no prediction for {} instance(s): {}", .0.len(), .0.join(", "))]
    MissingPredictions(Vec<String>),
    #[error("duplicate prediction for instance {0}")]
    DuplicatePrediction(String),
    #[error("attention statistics need at least one non-empty attention vector")]
    NoAttention,
    #[error("reports cover different instances: {0}")]
    IdMismatch(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 1.0 iff the normalized strings are equal.
pub fn exact_match(prediction: &str, gold: &str) -> f64 {
    if normalize(prediction) == normalize(gold) {
        1.0
    } else {
        0.0
    }
}

/// Bag-of-tokens F1 between normalized strings; 0 when either is empty.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let (p, g) = (normalize(prediction), normalize(gold));
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: String,
    /// Final-hop attention over windows, when recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
}

pub fn write_predictions(
    path: impl AsRef<Path>,
    predictions: &[Prediction],
) -> Result<(), EvalError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in predictions {
        let line = serde_json::to_string(p).map_err(|e| EvalError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, EvalError> {
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionStats {
    pub mean_max_alpha: f64,
    /// Mean absolute deviation of the per-instance maxima from their mean.
    pub mean_abs_deviation: f64,
}

/// Statistics of the per-instance maximum attention weight.
pub fn attention_stats<'a>(
    alphas: impl IntoIterator<Item = &'a [f64]>,
) -> Result<AttentionStats, EvalError> {
    let maxima: Vec<f64> = alphas
        .into_iter()
        .filter(|a| !a.is_empty())
        .map(|a| a.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    if maxima.is_empty() {
        return Err(EvalError::NoAttention);
    }
    let n = maxima.len() as f64;
    let mean = maxima.iter().sum::<f64>() / n;
    let mad = maxima.iter().map(|m| (m - mean).abs()).sum::<f64>() / n;
    Ok(AttentionStats {
        mean_max_alpha: mean,
        mean_abs_deviation: mad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub em: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub count: usize,
}

impl Metrics {
    fn of<'a>(scores: impl Iterator<Item = &'a InstanceScore>) -> Self {
        let (mut em, mut f1, mut n) = (0.0, 0.0, 0usize);
        for s in scores {
            em += s.em;
            f1 += s.f1;
            n += 1;
        }
        if n == 0 {
            return Metrics::default();
        }
        let pct = |x: f64| 100.0 * x / n as f64;
        Metrics {
            em: pct(em),
            f1: pct(f1),
            accuracy: pct(em),
            count: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub id: String,
    pub prediction: String,
    pub gold: String,
    pub em: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seen: Option<bool>,
}

/// Metrics in percent. Accuracy counts exact entity matches, so it equals EM
/// for single-entity answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub em: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seen: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unseen: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointer_disagreements: Option<usize>,
    pub instances: Vec<InstanceScore>,
}

impl EvalReport {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            em: self.em,
            f1: self.f1,
            accuracy: self.accuracy,
            count: self.count,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| EvalError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Scores every dataset instance against its prediction. With `train`,
/// instances are split by whether the gold answer occurs as an entity in
/// the training passages.
pub fn evaluate(
    predictions: &[Prediction],
    dataset: &Dataset,
    train: Option<&Dataset>,
) -> Result<EvalReport, EvalError> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(&p.id, p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.id.clone()));
        }
    }
    let missing: Vec<String> = dataset
        .iter()
        .filter(|i| !by_id.contains_key(i.id.as_str()))
        .map(|i| i.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingPredictions(missing));
    }
    let seen_set = train.map(entity_set);
    let instances: Vec<InstanceScore> = dataset
        .iter()
        .map(|inst| {
            let p = by_id[inst.id.as_str()];
            InstanceScore {
                id: inst.id.clone(),
                prediction: p.prediction.clone(),
                gold: inst.answer.clone(),
                em: exact_match(&p.prediction, &inst.answer),
                f1: token_f1(&p.prediction, &inst.answer),
                seen: seen_set.as_ref().map(|s| s.contains(&inst.answer_key())),
            }
        })
        .collect();
    let all = Metrics::of(instances.iter());
    let (seen, unseen) = match &seen_set {
        Some(_) => (
            Some(Metrics::of(
                instances.iter().filter(|s| s.seen == Some(true)),
            )),
            Some(Metrics::of(
                instances.iter().filter(|s| s.seen == Some(false)),
            )),
        ),
        None => (None, None),
    };
    let alphas: Vec<&[f64]> = predictions
        .iter()
        .filter_map(|p| p.alpha.as_deref())
        .collect();
    let attention = if alphas.is_empty() {
        None
    } else {
        Some(attention_stats(alphas)?)
    };
    Ok(EvalReport {
        em: all.em,
        f1: all.f1,
        accuracy: all.accuracy,
        count: all.count,
        attention,
        seen,
        unseen,
        pointer_disagreements: None,
        instances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub em: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl MetricDelta {
    fn between(a: &Metrics, b: &Metrics) -> Self {
        Self {
            em: b.em - a.em,
            f1: b.f1 - a.f1,
            accuracy: b.accuracy - a.accuracy,
        }
    }
}

/// Differences `B − A`, plus the instances whose exact match flipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub overall: MetricDelta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seen: Option<MetricDelta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unseen: Option<MetricDelta>,
    /// Wrong in A, right in B.
    pub fixed: Vec<String>,
    /// Right in A, wrong in B.
    pub broken: Vec<String>,
}

pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<Comparison, EvalError> {
    let a_ids: BTreeMap<&str, &InstanceScore> =
        a.instances.iter().map(|s| (s.id.as_str(), s)).collect();
    let b_ids: BTreeMap<&str, &InstanceScore> =
        b.instances.iter().map(|s| (s.id.as_str(), s)).collect();
    if a_ids.len() != b_ids.len() || a_ids.keys().ne(b_ids.keys()) {
        let diff: Vec<&str> = a_ids
            .keys()
            .filter(|k| !b_ids.contains_key(*k))
            .chain(b_ids.keys().filter(|k| !a_ids.contains_key(*k)))
            .copied()
            .take(10)
            .collect();
        return Err(EvalError::IdMismatch(diff.join(", ")));
    }
    let mut fixed = Vec::new();
    let mut broken = Vec::new();
    for s in &a.instances {
        let other = b_ids[s.id.as_str()];
        match (s.em > 0.5, other.em > 0.5) {
            (false, true) => fixed.push(s.id.clone()),
            (true, false) => broken.push(s.id.clone()),
            _ => {}
        }
    }
    let sub = |x: &Option<Metrics>, y: &Option<Metrics>| match (x, y) {
        (Some(x), Some(y)) => Some(MetricDelta::between(x, y)),
        _ => None,
    };
    Ok(Comparison {
        overall: MetricDelta::between(&a.metrics(), &b.metrics()),
        seen: sub(&a.seen, &b.seen),
        unseen: sub(&a.unseen, &b.unseen),
        fixed,
        broken,
    })
}
