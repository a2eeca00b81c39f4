//! Small dense-vector helpers shared by every module.
//!
//! All reductions accumulate in `f64` in index order, so results do not
//! depend on thread count.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VectorError {
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Cosine similarity. Zero vectors are rejected rather than smoothed.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, VectorError> {
    if a.len() != b.len() {
        return Err(VectorError::DimMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb))
}

/// Component-wise arithmetic mean of a non-empty set of rows.
pub fn mean_of<'a, I>(rows: I, dim: usize) -> Option<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
        count += 1;
    }
    if count == 0 {
        return None;
    }
    let n = count as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Some(acc)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `floor(n * frac)` with a small guard against products like `0.29 * 100`
/// landing a hair below the integer.
pub fn floor_count(n: usize, frac: f64) -> usize {
    let raw = n as f64 * frac;
    let snapped = raw.round();
    if (raw - snapped).abs() < 1e-9 * raw.abs().max(1.0) {
        snapped as usize
    } else {
        raw.floor() as usize
    }
}
