//! Domain centroids, inter-/intra-diversity scores and quantile slicing.
//!
//! Per-sample scores are cosine based: inter-diversity sums a sample's
//! cosine similarity to every *other* domain centroid, intra-diversity is
//! the cosine to its own centroid. The global metrics are Euclidean: mean
//! pairwise centroid distance, and per-domain mean squared distance to the
//! centroid.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::FeatureMatrix;
use crate::vector::{self, VectorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiversityError {
    #[error("domain {0} has no samples")]
    EmptyDomain(usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("need at least two domains")]
    TooFewDomains,
    #[error("invalid percentile range [{lo}, {hi})")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("label {label} out of range for {k} domains")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid centroid set: {0}")]
    InvalidCentroids(String),
}

impl From<VectorError> for DiversityError {
    fn from(e: VectorError) -> Self {
        match e {
            VectorError::ZeroVector => DiversityError::ZeroVector,
            VectorError::DimMismatch { expected, found } => {
                DiversityError::DimMismatch { expected, found }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ComputedFromLabels,
    Synthesized,
}

/// K named domain prototypes in feature space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCentroidSet")]
pub struct CentroidSet {
    names: Vec<String>,
    vectors: Vec<Vec<f64>>,
    provenance: Provenance,
}

#[derive(Deserialize)]
struct RawCentroidSet {
    names: Vec<String>,
    vectors: Vec<Vec<f64>>,
    provenance: Provenance,
}

impl TryFrom<RawCentroidSet> for CentroidSet {
    type Error = DiversityError;

    fn try_from(r: RawCentroidSet) -> Result<Self, Self::Error> {
        CentroidSet::new(r.names, r.vectors, r.provenance)
    }
}

impl CentroidSet {
    pub fn new(
        names: Vec<String>,
        vectors: Vec<Vec<f64>>,
        provenance: Provenance,
    ) -> Result<Self, DiversityError> {
        if vectors.is_empty() {
            return Err(DiversityError::InvalidCentroids("no centroids".into()));
        }
        if names.len() != vectors.len() {
            return Err(DiversityError::LengthMismatch {
                expected: vectors.len(),
                found: names.len(),
            });
        }
        let dim = vectors[0].len();
        for v in &vectors {
            if v.len() != dim {
                return Err(DiversityError::DimMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(DiversityError::InvalidCentroids("non-finite entry".into()));
            }
            if v.iter().all(|x| *x == 0.0) {
                return Err(DiversityError::ZeroVector);
            }
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(DiversityError::InvalidCentroids(format!("duplicate name {n:?}")));
            }
        }
        Ok(Self {
            names,
            vectors,
            provenance,
        })
    }

    pub fn k(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k]
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

pub fn default_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("domain-{i}")).collect()
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<(), DiversityError> {
    if labels.len() != n {
        return Err(DiversityError::LengthMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(DiversityError::LabelOutOfRange { label, k });
    }
    Ok(())
}

/// Mean of the rows carrying each label.
pub fn compute_centroids(
    features: &FeatureMatrix,
    labels: &[usize],
    k: usize,
    names: Option<Vec<String>>,
) -> Result<CentroidSet, DiversityError> {
    check_labels(labels, features.len(), k)?;
    let dim = features.dim();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (row, &l) in features.rows().zip(labels) {
        for (s, v) in sums[l].iter_mut().zip(row) {
            *s += v;
        }
        counts[l] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(DiversityError::EmptyDomain(empty));
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= c as f64);
    }
    CentroidSet::new(
        names.unwrap_or_else(|| default_names(k)),
        sums,
        Provenance::ComputedFromLabels,
    )
}

/// Sum of cosine similarities between `x` and every centroid except `own_k`.
pub fn phi_inter(x: &[f64], centroids: &CentroidSet, own_k: usize) -> Result<f64, DiversityError> {
    if own_k >= centroids.k() {
        return Err(DiversityError::LabelOutOfRange {
            label: own_k,
            k: centroids.k(),
        });
    }
    let mut total = 0.0;
    for (j, c) in centroids.vectors().iter().enumerate() {
        if j != own_k {
            total += vector::cosine(x, c)?;
        }
    }
    Ok(total)
}

/// Mean Euclidean distance over all unordered centroid pairs.
pub fn big_phi_inter(centroids: &CentroidSet) -> Result<f64, DiversityError> {
    mean_pairwise_distance(centroids.vectors())
}

/// Mean Euclidean distance over all unordered pairs of raw vectors.
pub fn mean_pairwise_distance(v: &[Vec<f64>]) -> Result<f64, DiversityError> {
    let k = v.len();
    if k < 2 {
        return Err(DiversityError::TooFewDomains);
    }
    let mut total = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            total += vector::distance(&v[a], &v[b]);
        }
    }
    Ok(total / (k * (k - 1) / 2) as f64)
}

/// Cosine similarity of `x` to its own domain centroid.
pub fn phi_intra(x: &[f64], centroid: &[f64]) -> Result<f64, DiversityError> {
    Ok(vector::cosine(x, centroid)?)
}

/// Mean squared Euclidean distance of `rows` to `center`.
pub fn mean_squared_distance<'a, I>(rows: I, center: &[f64]) -> Result<f64, DiversityError>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut total = 0.0;
    let mut n = 0usize;
    for r in rows {
        total += vector::squared_distance(r, center);
        n += 1;
    }
    if n == 0 {
        return Err(DiversityError::EmptyDomain(0));
    }
    Ok(total / n as f64)
}

/// Per-domain mean squared Euclidean distance to the domain centroid.
pub fn big_phi_intra(
    features: &FeatureMatrix,
    labels: &[usize],
    centroids: &CentroidSet,
) -> Result<Vec<f64>, DiversityError> {
    let k = centroids.k();
    check_labels(labels, features.len(), k)?;
    if features.dim() != centroids.dim() {
        return Err(DiversityError::DimMismatch {
            expected: centroids.dim(),
            found: features.dim(),
        });
    }
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (row, &l) in features.rows().zip(labels) {
        sums[l] += vector::squared_distance(row, centroids.vector(l));
        counts[l] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(DiversityError::EmptyDomain(empty));
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Inter,
    Intra,
}

/// Per-sample scores aligned with feature ids.
#[derive(Clone, Debug, PartialEq)]
pub struct DiversityScores {
    pub kind: ScoreKind,
    pub ids: Vec<String>,
    pub values: Vec<f64>,
    pub domain_of: Vec<usize>,
}

impl DiversityScores {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Score every row against the centroid set. Parallel over rows; output
/// order follows the feature matrix.
pub fn score_samples(
    features: &FeatureMatrix,
    labels: &[usize],
    centroids: &CentroidSet,
    kind: ScoreKind,
) -> Result<DiversityScores, DiversityError> {
    check_labels(labels, features.len(), centroids.k())?;
    if features.dim() != centroids.dim() {
        return Err(DiversityError::DimMismatch {
            expected: centroids.dim(),
            found: features.dim(),
        });
    }
    let values = (0..features.len())
        .into_par_iter()
        .map(|i| {
            let x = features.row(i);
            match kind {
                ScoreKind::Inter => phi_inter(x, centroids, labels[i]),
                ScoreKind::Intra => phi_intra(x, centroids.vector(labels[i])),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DiversityScores {
        kind,
        ids: features.ids().to_vec(),
        values,
        domain_of: labels.to_vec(),
    })
}

/// Members of an ascending-rank percentile window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileSlice {
    pub lo: f64,
    pub hi: f64,
    pub ids: Vec<String>,
}

fn check_range(lo: f64, hi: f64) -> Result<(), DiversityError> {
    if (0.0..100.0).contains(&lo) && hi > lo && hi <= 100.0 {
        Ok(())
    } else {
        Err(DiversityError::InvalidRange { lo, hi })
    }
}

/// Positions ranked by ascending value; ties by ascending id.
fn ascending_order(ids: &[&str], values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then_with(|| ids[a].cmp(ids[b])));
    order
}

fn rank_window(n: usize, lo: f64, hi: f64) -> std::ops::Range<usize> {
    vector::floor_count(n, lo / 100.0)..vector::floor_count(n, hi / 100.0)
}

/// Items whose ascending rank `r` satisfies
/// `floor(N*lo/100) <= r < floor(N*hi/100)`. Ids come back in rank order.
pub fn quantile_partition(
    ids: &[&str],
    values: &[f64],
    lo: f64,
    hi: f64,
) -> Result<QuantileSlice, DiversityError> {
    check_range(lo, hi)?;
    if ids.len() != values.len() {
        return Err(DiversityError::LengthMismatch {
            expected: ids.len(),
            found: values.len(),
        });
    }
    let order = ascending_order(ids, values);
    let window = rank_window(ids.len(), lo, hi);
    Ok(QuantileSlice {
        lo,
        hi,
        ids: order[window].iter().map(|&i| ids[i].to_owned()).collect(),
    })
}

/// Slice each domain separately, then union. Ids are grouped by domain in
/// ascending domain order, rank order within a domain.
pub fn per_domain_slice(
    scores: &DiversityScores,
    lo: f64,
    hi: f64,
) -> Result<QuantileSlice, DiversityError> {
    check_range(lo, hi)?;
    let k = scores.domain_of.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = Vec::new();
    for d in 0..k {
        let members: Vec<usize> = (0..scores.len())
            .filter(|&i| scores.domain_of[i] == d)
            .collect();
        let ids: Vec<&str> = members.iter().map(|&i| scores.ids[i].as_str()).collect();
        let values: Vec<f64> = members.iter().map(|&i| scores.values[i]).collect();
        out.extend(quantile_partition(&ids, &values, lo, hi)?.ids);
    }
    Ok(QuantileSlice { lo, hi, ids: out })
}

/// Slice over all samples at once, ignoring domains.
pub fn global_slice(
    scores: &DiversityScores,
    lo: f64,
    hi: f64,
) -> Result<QuantileSlice, DiversityError> {
    let ids: Vec<&str> = scores.ids.iter().map(String::as_str).collect();
    quantile_partition(&ids, &scores.values, lo, hi)
}

/// Map a similarity-table label "(X-Y)" to its ascending-rank window.
///
/// A label (X-Y) names the samples ranked in the top (100-Y)% to (100-X)%
/// of similarity, i.e. the ascending window `[100-Y, 100-X)`. So "(80-100)"
/// is the lowest 20% of similarity (most diverse) and "(0-20)" the highest.
pub fn label_to_rank_window(label_lo: f64, label_hi: f64) -> Result<(f64, f64), DiversityError> {
    check_range(label_lo, label_hi)?;
    Ok((100.0 - label_hi, 100.0 - label_lo))
}

/// The five 20% windows.
pub const QUINTILES: [(f64, f64); 5] = [
    (0.0, 20.0),
    (20.0, 40.0),
    (40.0, 60.0),
    (60.0, 80.0),
    (80.0, 100.0),
];

#[derive(Serialize)]
pub struct ScoreEntry<'a> {
    pub id: &'a str,
    pub value: f64,
}

#[derive(Serialize)]
pub struct DiversityReport<'a> {
    pub kind: ScoreKind,
    pub scores: Vec<ScoreEntry<'a>>,
    pub slices: &'a [QuantileSlice],
}

impl<'a> DiversityReport<'a> {
    pub fn new(scores: &'a DiversityScores, slices: &'a [QuantileSlice]) -> Self {
        Self {
            kind: scores.kind,
            scores: scores
                .ids
                .iter()
                .zip(&scores.values)
                .map(|(id, &value)| ScoreEntry { id, value })
                .collect(),
            slices,
        }
    }
}
