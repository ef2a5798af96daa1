//! Forward computations on plain tensors. The tape records these and adds
//! the matching backward rules.

use super::{ComputeError, Tensor};

/// Floor applied to the target probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Element-wise mean of equally sized vectors.
pub fn mean_rows(rows: &[&[f64]]) -> Result<Vec<f64>, ComputeError> {
    let first = rows.first().ok_or(ComputeError::EmptyInput)?;
    let d = first.len();
    let mut out = vec![0.0; d];
    for r in rows {
        if r.len() != d {
            return Err(ComputeError::ShapeMismatch {
                op: "mean_rows",
                expected: format!("rows of length {d}"),
                got: format!("row of length {}", r.len()),
            });
        }
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0.0 when either argument has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, ComputeError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(ComputeError::ShapeMismatch {
            op: "cosine",
            expected: format!("two non-empty vectors of length {}", a.len()),
            got: format!("length {}", b.len()),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Max-subtracted softmax.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>, ComputeError> {
    if x.is_empty() {
        return Err(ComputeError::EmptyInput);
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    Ok(out)
}

/// `W x + b` for `W` of shape `C×k`.
pub fn linear(w: &Tensor, x: &[f64], b: &[f64]) -> Result<Vec<f64>, ComputeError> {
    if !w.is_matrix() || w.cols() != x.len() || w.rows() != b.len() {
        return Err(ComputeError::ShapeMismatch {
            op: "linear",
            expected: format!("W {:?} with x[{}] and b[{}]", w.shape(), w.cols(), w.rows()),
            got: format!("x[{}], b[{}]", x.len(), b.len()),
        });
    }
    Ok((0..w.rows()).map(|i| dot(w.row(i), x) + b[i]).collect())
}

pub fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// `−ln(max(probs[target], PROB_FLOOR))`; NaN propagates.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64, ComputeError> {
    let p = *probs.get(target).ok_or(ComputeError::TargetOutOfRange {
        target,
        classes: probs.len(),
    })?;
    if p.is_nan() {
        return Ok(f64::NAN);
    }
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Index of the maximum; ties resolve to the lowest index.
pub fn argmax(x: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in x.iter().enumerate() {
        match best {
            Some(b) if x[b] >= *v => {}
            _ => best = Some(i),
        }
    }
    best
}
