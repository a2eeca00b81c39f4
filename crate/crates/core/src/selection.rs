//! Entropy-reward selection over the scored pool.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, FeatureMatrix};
use crate::probe::{Head, MlpParams, ProbeError};
use crate::report::{digest_hex, fnv1a_ids};
use crate::vector::{argmax, floor_count};

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("selection pool is empty")]
    EmptyPool,
    #[error("selection is empty")]
    EmptySelection,
    #[error("fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("domain {domain}: ratio {ratio} is invalid")]
    InvalidRatio { domain: usize, ratio: f64 },
    #[error("domain {domain}: requested {requested} of {available}")]
    RatioOverflow {
        domain: usize,
        requested: usize,
        available: usize,
    },
    #[error("expected {expected} entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("domain index {domain} has no ratio ({k} given)")]
    UnknownDomain { domain: usize, k: usize },
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SelectionPolicy {
    TopFraction { frac: f64 },
    PerDomain { ratios: Vec<f64> },
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::TopFraction { frac: 0.2 }
    }
}

fn check_regressor(model: &MlpParams, features: &FeatureMatrix) -> Result<(), SelectionError> {
    if features.dim() != model.input_dim() {
        return Err(ProbeError::DimMismatch {
            expected: model.input_dim(),
            found: features.dim(),
        }
        .into());
    }
    Ok(())
}

/// Predicted entropy for every row, aligned with `features.ids()`.
pub fn score_pool(psi_div: &MlpParams, features: &FeatureMatrix) -> Result<Vec<f64>, SelectionError> {
    if psi_div.head != Head::Regressor {
        return Err(ProbeError::WrongHead("regressor").into());
    }
    check_regressor(psi_div, features)?;
    let rows: Vec<&[f64]> = features.rows().collect();
    let out: Result<Vec<f64>, ProbeError> = rows.par_iter().map(|x| Ok(psi_div.forward(x)?[0])).collect();
    Ok(out?)
}

/// Argmax domain of the classifier for every row.
pub fn predict_domains(psi_dom: &MlpParams, features: &FeatureMatrix) -> Result<Vec<usize>, SelectionError> {
    if !matches!(psi_dom.head, Head::Classifier { .. }) {
        return Err(ProbeError::WrongHead("classifier").into());
    }
    check_regressor(psi_dom, features)?;
    let rows: Vec<&[f64]> = features.rows().collect();
    let out: Result<Vec<usize>, ProbeError> =
        rows.par_iter().map(|x| Ok(argmax(&psi_dom.forward(x)?))).collect();
    Ok(out?)
}

/// Positions sorted by descending score, ties by ascending id.
pub fn rank_desc<S: AsRef<str>>(ids: &[S], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| ids[a].as_ref().cmp(ids[b].as_ref()))
    });
    order
}

fn check_len(expected: usize, found: usize) -> Result<(), SelectionError> {
    if expected != found {
        return Err(SelectionError::LengthMismatch { expected, found });
    }
    Ok(())
}

/// The `floor(N * frac)` highest-scoring ids, best first.
pub fn select_top_fraction<S: AsRef<str>>(
    ids: &[S],
    scores: &[f64],
    frac: f64,
) -> Result<Vec<String>, SelectionError> {
    check_len(ids.len(), scores.len())?;
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(SelectionError::InvalidFraction(frac));
    }
    if ids.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    let n = floor_count(ids.len(), frac);
    Ok(rank_desc(ids, scores)[..n]
        .iter()
        .map(|&i| ids[i].as_ref().to_owned())
        .collect())
}

/// Top `floor(n_k * ratio_k)` by score inside each predicted domain. The
/// union comes back in global rank order.
pub fn select_per_domain<S: AsRef<str>>(
    ids: &[S],
    scores: &[f64],
    domain_of: &[usize],
    ratios: &[f64],
) -> Result<Vec<String>, SelectionError> {
    check_len(ids.len(), scores.len())?;
    check_len(ids.len(), domain_of.len())?;
    if ids.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    let k = ratios.len();
    let mut sizes = vec![0usize; k];
    for &d in domain_of {
        if d >= k {
            return Err(SelectionError::UnknownDomain { domain: d, k });
        }
        sizes[d] += 1;
    }
    let mut quota = Vec::with_capacity(k);
    for (d, &r) in ratios.iter().enumerate() {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(SelectionError::InvalidRatio { domain: d, ratio: r });
        }
        let want = floor_count(sizes[d], r);
        if want > sizes[d] {
            return Err(SelectionError::RatioOverflow {
                domain: d,
                requested: want,
                available: sizes[d],
            });
        }
        quota.push(want);
    }
    let mut out = Vec::new();
    for i in rank_desc(ids, scores) {
        let d = domain_of[i];
        if quota[d] > 0 {
            quota[d] -= 1;
            out.push(ids[i].as_ref().to_owned());
        }
    }
    Ok(out)
}

/// `|A ∩ B| / max(|A|, |B|)`.
pub fn overlap<S: AsRef<str>>(a: &[S], b: &[S]) -> Result<f64, SelectionError> {
    if a.is_empty() || b.is_empty() {
        return Err(SelectionError::EmptySelection);
    }
    let sa: HashSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let sb: HashSet<&str> = b.iter().map(AsRef::as_ref).collect();
    let shared = sa.intersection(&sb).count();
    Ok(shared as f64 / sa.len().max(sb.len()) as f64)
}

/// Restrict the corpus to `chosen` (kept in corpus order).
pub fn subset_corpus<S: AsRef<str>>(corpus: &Corpus, chosen: &[S]) -> Result<Corpus, SelectionError> {
    let mut keep = Vec::with_capacity(chosen.len());
    for id in chosen {
        let id = id.as_ref();
        keep.push(corpus.position(id).ok_or_else(|| SelectionError::UnknownId(id.to_owned()))?);
    }
    Ok(corpus.subset(&keep))
}

/// Write the chosen records as JSONL. Returns how many were written; an
/// empty selection writes an empty file.
pub fn export_subset<S: AsRef<str>>(
    corpus: &Corpus,
    chosen: &[S],
    path: &Path,
) -> Result<usize, SelectionError> {
    let sub = subset_corpus(corpus, chosen)?;
    std::fs::write(path, sub.to_jsonl()).map_err(|source| SelectionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(sub.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    /// Values above `hi` land in the last bin, below `lo` in the first.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn fixed(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0usize; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
            let b = if b.is_nan() { 0 } else { (b.max(0.0) as usize).min(bins - 1) };
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub policy: SelectionPolicy,
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub domain_of: Vec<usize>,
    pub chosen_ids: Vec<String>,
    /// Chosen ids per predicted domain.
    pub per_domain_counts: Vec<usize>,
}

impl SelectionResult {
    pub fn digest(&self) -> u64 {
        fnv1a_ids(&self.chosen_ids)
    }
}

/// Apply `policy` to a scored pool.
pub fn select(
    ids: Vec<String>,
    scores: Vec<f64>,
    domain_of: Vec<usize>,
    n_domains: usize,
    policy: &SelectionPolicy,
) -> Result<SelectionResult, SelectionError> {
    check_len(ids.len(), domain_of.len())?;
    let chosen_ids = match policy {
        SelectionPolicy::TopFraction { frac } => select_top_fraction(&ids, &scores, *frac)?,
        SelectionPolicy::PerDomain { ratios } => {
            check_len(n_domains, ratios.len())?;
            select_per_domain(&ids, &scores, &domain_of, ratios)?
        }
    };
    let chosen: HashSet<&str> = chosen_ids.iter().map(String::as_str).collect();
    let mut per_domain_counts = vec![0usize; n_domains];
    for (id, &d) in ids.iter().zip(&domain_of) {
        if d >= n_domains {
            return Err(SelectionError::UnknownDomain { domain: d, k: n_domains });
        }
        if chosen.contains(id.as_str()) {
            per_domain_counts[d] += 1;
        }
    }
    Ok(SelectionResult {
        policy: policy.clone(),
        ids,
        scores,
        domain_of,
        chosen_ids,
        per_domain_counts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub policy: SelectionPolicy,
    pub pool_size: usize,
    pub chosen_count: usize,
    pub histogram: Histogram,
    pub per_domain_counts: Vec<usize>,
    pub digest: String,
}

impl SelectionReport {
    pub fn new(result: &SelectionResult) -> Self {
        let k = result.per_domain_counts.len().max(1);
        Self {
            policy: result.policy.clone(),
            pool_size: result.ids.len(),
            chosen_count: result.chosen_ids.len(),
            histogram: Histogram::fixed(&result.scores, 0.0, (k as f64).ln(), HISTOGRAM_BINS),
            per_domain_counts: result.per_domain_counts.clone(),
            digest: digest_hex(result.digest()),
        }
    }
}
