//! Pseudo-labels from centroid-initialized k-means, and probe-set curation.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::FeatureMatrix;
use crate::diversity::{CentroidSet, DiversityError, Provenance};
use crate::vector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("need at least two initial centroids")]
    TooFewCentroids,
    #[error("no features to cluster")]
    EmptyInput,
    #[error("requested {requested} probe samples but only {available} are eligible")]
    InsufficientSamples { requested: usize, available: usize },
    #[error("cluster {0} has no eligible samples")]
    EmptyCluster(usize),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Centroids(#[from] DiversityError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// Assign to the initial centroids once, without Lloyd updates.
    pub freeze_centroids: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            freeze_centroids: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub final_centroids: CentroidSet,
    /// Within-cluster sum of squared distances after each assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
}

/// Nearest centroid by squared Euclidean distance; ties to the lowest index.
pub fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, vector::squared_distance(row, &centroids[0]));
    for (k, c) in centroids.iter().enumerate().skip(1) {
        let d = vector::squared_distance(row, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn assign(features: &FeatureMatrix, centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let pairs: Vec<(usize, f64)> = (0..features.len())
        .into_par_iter()
        .map(|i| nearest(features.row(i), centroids))
        .collect();
    // fixed-order sum keeps the objective independent of thread count
    let objective = pairs.iter().map(|p| p.1).sum();
    (pairs.into_iter().map(|p| p.0).collect(), objective)
}

/// Lloyd iterations hard-initialized at `init`.
///
/// Each iteration assigns every row to its nearest centroid and records the
/// objective; the loop stops when the relative improvement drops below
/// `tol` (or the objective reaches zero) or after `max_iters`. The returned
/// centroids are the ones the final assignment was made against, so every
/// assignment is nearest among `final_centroids`. Empty clusters keep their
/// incoming centroid.
pub fn cluster(
    features: &FeatureMatrix,
    init: &CentroidSet,
    cfg: &ClusterConfig,
) -> Result<ClusterResult, ClusterError> {
    if init.k() < 2 {
        return Err(ClusterError::TooFewCentroids);
    }
    if features.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    if features.dim() != init.dim() {
        return Err(ClusterError::DimMismatch {
            expected: init.dim(),
            found: features.dim(),
        });
    }
    if cfg.max_iters == 0 {
        return Err(ClusterError::InvalidParam("max_iters must be >= 1".into()));
    }
    let k = init.k();
    let dim = features.dim();
    let mut centroids = init.vectors().to_vec();
    let mut trace: Vec<f64> = Vec::new();
    let mut assignments;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let (a, objective) = assign(features, &centroids);
        assignments = a;
        let converged = match trace.last() {
            _ if objective == 0.0 => true,
            Some(&prev) => prev - objective <= cfg.tol * prev,
            None => false,
        };
        trace.push(objective);
        if converged || cfg.freeze_centroids || iterations >= cfg.max_iters {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (row, &c) in features.rows().zip(&assignments) {
            for (s, v) in sums[c].iter_mut().zip(row) {
                *s += v;
            }
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s / n).collect();
            }
        }
    }
    let provenance = if cfg.freeze_centroids {
        init.provenance()
    } else {
        Provenance::ComputedFromLabels
    };
    Ok(ClusterResult {
        assignments,
        final_centroids: CentroidSet::new(init.names().to_vec(), centroids, provenance)?,
        objective_trace: trace,
        iterations_run: iterations,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterReport<'a> {
    pub ids: &'a [String],
    pub assignments: &'a [usize],
    pub sizes: Vec<usize>,
    pub objective_trace: &'a [f64],
    pub iterations_run: usize,
    /// Cosine between initial and final centroid, per cluster.
    pub centroid_drift: Vec<f64>,
    pub final_centroids: &'a CentroidSet,
}

impl<'a> ClusterReport<'a> {
    pub fn new(ids: &'a [String], init: &CentroidSet, result: &'a ClusterResult) -> Self {
        let k = init.k();
        let mut sizes = vec![0; k];
        for &a in &result.assignments {
            sizes[a] += 1;
        }
        let centroid_drift = (0..k)
            .map(|c| {
                vector::cosine(init.vector(c), result.final_centroids.vector(c))
                    .expect("centroids are non-zero")
            })
            .collect();
        Self {
            ids,
            assignments: &result.assignments,
            sizes,
            objective_trace: &result.objective_trace,
            iterations_run: result.iterations_run,
            centroid_drift,
            final_centroids: &result.final_centroids,
        }
    }
}

/// Largest-remainder apportionment of `m` across `counts`. Ties in the
/// fractional part go to the lower index.
pub fn largest_remainder(counts: &[usize], m: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    // exact integer arithmetic: quota_k = m * n_k / total
    let mut quotas: Vec<usize> = counts.iter().map(|&n| m * n / total).collect();
    let mut rema: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .map(|(k, &n)| (k, m * n % total))
        .collect();
    rema.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let short = m - quotas.iter().sum::<usize>();
    for &(k, _) in rema.iter().take(short) {
        quotas[k] += 1;
    }
    quotas
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSetConfig {
    pub m: usize,
    pub holdout_frac: f64,
    pub rng_seed: u64,
}

impl Default for ProbeSetConfig {
    fn default() -> Self {
        Self {
            m: 5000,
            holdout_frac: 0.1,
            rng_seed: 0,
        }
    }
}

/// Curated probe training data with pseudo-labels and a holdout split.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    pub ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub holdout_ids: Vec<String>,
}

impl ProbeSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions of training rows and holdout rows, both in probe order.
    pub fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let hold: HashSet<&str> = self.holdout_ids.iter().map(String::as_str).collect();
        (0..self.len()).partition(|&i| !hold.contains(self.ids[i].as_str()))
    }

    /// Wrap explicit labelled data, holding out a seeded fraction.
    pub fn from_labeled(
        ids: Vec<String>,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        n_classes: usize,
        holdout_frac: f64,
        rng_seed: u64,
    ) -> Self {
        let holdout_ids = holdout_split(&ids, holdout_frac, rng_seed);
        Self {
            ids,
            features,
            labels,
            n_classes,
            holdout_ids,
        }
    }
}

fn holdout_split(ids: &[String], frac: f64, seed: u64) -> Vec<String> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    order.shuffle(&mut rng);
    let n = vector::floor_count(ids.len(), frac);
    let mut hold: Vec<usize> = order[..n].to_vec();
    hold.sort_unstable();
    hold.into_iter().map(|i| ids[i].clone()).collect()
}

/// Draw `m` ids stratified by cluster proportions among eligible rows (those
/// not in `reserved`), then carve a seeded holdout split.
pub fn build_probe_set(
    hidden_features: &FeatureMatrix,
    assignments: &[usize],
    n_classes: usize,
    reserved: &HashSet<String>,
    cfg: &ProbeSetConfig,
) -> Result<ProbeSet, ClusterError> {
    if assignments.len() != hidden_features.len() {
        return Err(ClusterError::LengthMismatch {
            expected: hidden_features.len(),
            found: assignments.len(),
        });
    }
    if !(0.0..1.0).contains(&cfg.holdout_frac) {
        return Err(ClusterError::InvalidParam("holdout_frac must be in [0, 1)".into()));
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= n_classes) {
        return Err(ClusterError::InvalidParam(format!(
            "assignment {bad} outside {n_classes} clusters"
        )));
    }
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, id) in hidden_features.ids().iter().enumerate() {
        if !reserved.contains(id) {
            strata[assignments[i]].push(i);
        }
    }
    let available: usize = strata.iter().map(Vec::len).sum();
    if cfg.m > available {
        return Err(ClusterError::InsufficientSamples {
            requested: cfg.m,
            available,
        });
    }
    if let Some(empty) = strata.iter().position(Vec::is_empty) {
        return Err(ClusterError::EmptyCluster(empty));
    }
    let counts: Vec<usize> = strata.iter().map(Vec::len).collect();
    let quotas = largest_remainder(&counts, cfg.m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut chosen = Vec::with_capacity(cfg.m);
    for (members, &q) in strata.iter_mut().zip(&quotas) {
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..q]);
    }
    chosen.sort_unstable();
    let ids: Vec<String> = chosen.iter().map(|&i| hidden_features.ids()[i].clone()).collect();
    Ok(ProbeSet {
        holdout_ids: holdout_split(&ids, cfg.holdout_frac, cfg.rng_seed),
        features: chosen.iter().map(|&i| hidden_features.row(i).to_vec()).collect(),
        labels: chosen.iter().map(|&i| assignments[i]).collect(),
        n_classes,
        ids,
    })
}
