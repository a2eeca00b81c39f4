//! Discrete oracle for the importance-weight decomposition
//! `q(x)/p(x) = sum_k lambda_k p(c=k|x)` and its deterministic approximation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vector::argmax;

const TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ImportanceError {
    #[error("invalid joint table: {0}")]
    InvalidJoint(String),
    #[error("invalid target weights: {0}")]
    InvalidWeights(String),
    #[error("unknown symbol {0}")]
    UnknownSymbol(String),
    #[error("instance file: {0}")]
    Load(String),
}

/// Source joint `p(x, c)` over a finite support.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    support: Vec<String>,
    p_xc: Vec<Vec<f64>>,
}

impl DiscreteJoint {
    pub fn new(support: Vec<String>, p_xc: Vec<Vec<f64>>) -> Result<Self, ImportanceError> {
        let bad = |m: String| Err(ImportanceError::InvalidJoint(m));
        if support.is_empty() || support.len() != p_xc.len() {
            return bad(format!("{} symbols, {} rows", support.len(), p_xc.len()));
        }
        let k = p_xc[0].len();
        if k == 0 {
            return bad("no domains".into());
        }
        let mut total = 0.0;
        for (x, row) in support.iter().zip(&p_xc) {
            if row.len() != k {
                return bad(format!("row {x} has {} entries, expected {k}", row.len()));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return bad(format!("row {x} has a negative or non-finite entry"));
            }
            let px: f64 = row.iter().sum();
            if px <= 0.0 {
                return bad(format!("p({x}) = 0"));
            }
            total += px;
        }
        if (total - 1.0).abs() > TOL {
            return bad(format!("table sums to {total}"));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = support.iter().find(|s| !seen.insert(s.as_str())) {
            return bad(format!("duplicate symbol {dup}"));
        }
        Ok(Self { support, p_xc })
    }

    pub fn k(&self) -> usize {
        self.p_xc[0].len()
    }

    pub fn support(&self) -> &[String] {
        &self.support
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.p_xc
    }

    pub fn index(&self, x: &str) -> Result<usize, ImportanceError> {
        self.support
            .iter()
            .position(|s| s == x)
            .ok_or_else(|| ImportanceError::UnknownSymbol(x.to_owned()))
    }

    pub fn p_x(&self, i: usize) -> f64 {
        self.p_xc[i].iter().sum()
    }

    /// Domain marginals `p(c=k)`.
    pub fn p_c(&self) -> Vec<f64> {
        (0..self.k())
            .map(|k| self.p_xc.iter().map(|row| row[k]).sum())
            .collect()
    }

    pub fn posterior(&self, i: usize) -> Vec<f64> {
        let px = self.p_x(i);
        self.p_xc[i].iter().map(|v| v / px).collect()
    }
}

/// `lambda_k = q(c=k) / p(c=k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetWeights {
    pub lambda: Vec<f64>,
}

impl TargetWeights {
    pub fn new(lambda: Vec<f64>, joint: &DiscreteJoint) -> Result<Self, ImportanceError> {
        if lambda.len() != joint.k() {
            return Err(ImportanceError::InvalidWeights(format!(
                "{} weights for {} domains",
                lambda.len(),
                joint.k()
            )));
        }
        if lambda.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(ImportanceError::InvalidWeights("weights must be positive".into()));
        }
        let mass: f64 = lambda.iter().zip(joint.p_c()).map(|(l, p)| l * p).sum();
        if (mass - 1.0).abs() > TOL {
            return Err(ImportanceError::InvalidWeights(format!(
                "sum_k lambda_k p(c=k) = {mass}, expected 1"
            )));
        }
        Ok(Self { lambda })
    }

    /// All ones: the target equals the source.
    pub fn identity(k: usize) -> Self {
        Self { lambda: vec![1.0; k] }
    }
}

/// `sum_k lambda_k p(c=k|x)`.
pub fn density_ratio(joint: &DiscreteJoint, w: &TargetWeights, x: &str) -> Result<f64, ImportanceError> {
    let post = joint.posterior(joint.index(x)?);
    Ok(w.lambda.iter().zip(&post).map(|(l, p)| l * p).sum())
}

/// Builds `q` explicitly from `q(x|c) = p(x|c)` and `q(c) = lambda_c p(c)`,
/// then divides.
pub fn brute_ratio(joint: &DiscreteJoint, w: &TargetWeights, x: &str) -> Result<f64, ImportanceError> {
    let i = joint.index(x)?;
    let p_c = joint.p_c();
    let mut q_x = 0.0;
    for k in 0..joint.k() {
        if p_c[k] == 0.0 {
            continue;
        }
        let p_x_given_c = joint.table()[i][k] / p_c[k];
        let q_c = w.lambda[k] * p_c[k];
        q_x += p_x_given_c * q_c;
    }
    Ok(q_x / joint.p_x(i))
}

/// `lambda` at the most probable domain (ties to the lowest index).
pub fn deterministic_weight(
    joint: &DiscreteJoint,
    w: &TargetWeights,
    x: &str,
) -> Result<f64, ImportanceError> {
    let post = joint.posterior(joint.index(x)?);
    Ok(w.lambda[argmax(&post)])
}

/// `(sum_{j != k*} (lambda_j - lambda_k*) p(c=j|x))^2`.
pub fn approx_error(joint: &DiscreteJoint, w: &TargetWeights, x: &str) -> Result<f64, ImportanceError> {
    let post = joint.posterior(joint.index(x)?);
    let star = argmax(&post);
    let s: f64 = (0..post.len())
        .filter(|&j| j != star)
        .map(|j| (w.lambda[j] - w.lambda[star]) * post[j])
        .sum();
    Ok(s * s)
}

/// On-disk toy instance: `{"support": [...], "p_xc": [[...]], "lambda": [...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Instance {
    pub support: Vec<String>,
    pub p_xc: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
}

impl Instance {
    pub fn validate(self) -> Result<(DiscreteJoint, TargetWeights), ImportanceError> {
        let joint = DiscreteJoint::new(self.support, self.p_xc)?;
        let w = TargetWeights::new(self.lambda, &joint)?;
        Ok((joint, w))
    }
}

pub fn load_instance(path: &Path) -> Result<(DiscreteJoint, TargetWeights), ImportanceError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ImportanceError::Load(format!("{}: {e}", path.display())))?;
    let inst: Instance =
        serde_json::from_str(&text).map_err(|e| ImportanceError::Load(format!("{}: {e}", path.display())))?;
    inst.validate()
}

/// Seeded random instance with `|X| <= 10` and `K <= 5`. About one cell in
/// five is zeroed so some posteriors are sparse or one-hot.
pub fn random_instance(seed: u64) -> (DiscreteJoint, TargetWeights) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=10usize);
    let k = rng.random_range(1..=5usize);
    let mut table: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..k)
                .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.01..1.0) })
                .collect()
        })
        .collect();
    for row in table.iter_mut() {
        if row.iter().all(|v| *v == 0.0) {
            row[rng.random_range(0..k)] = rng.random_range(0.01..1.0);
        }
    }
    let total: f64 = table.iter().flatten().sum();
    for v in table.iter_mut().flatten() {
        *v /= total;
    }
    let support = (0..n).map(|i| format!("x{i}")).collect();
    let joint = DiscreteJoint::new(support, table).expect("normalized table is valid");
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..3.0)).collect();
    let p_c = joint.p_c();
    let mass: f64 = raw.iter().zip(&p_c).map(|(r, p)| r * p).sum();
    let lambda = raw.iter().map(|r| r / mass).collect();
    let w = TargetWeights::new(lambda, &joint).expect("normalized weights are valid");
    (joint, w)
}

/// The same joint with every `x` moved entirely to its argmax domain.
pub fn one_hot_version(joint: &DiscreteJoint) -> DiscreteJoint {
    let table = (0..joint.support().len())
        .map(|i| {
            let mut row = vec![0.0; joint.k()];
            row[argmax(&joint.table()[i])] = joint.p_x(i);
            row
        })
        .collect();
    DiscreteJoint::new(joint.support().to_vec(), table).expect("same marginals")
}

/// Rescale `lambda` so it satisfies the normalization on `joint`.
pub fn renormalize(lambda: &[f64], joint: &DiscreteJoint) -> TargetWeights {
    let mass: f64 = lambda.iter().zip(joint.p_c()).map(|(l, p)| l * p).sum();
    TargetWeights {
        lambda: lambda.iter().map(|l| l / mass).collect(),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    pub instances: usize,
    pub points: usize,
    /// max |density_ratio - brute_ratio|
    pub max_ratio_gap: f64,
    /// max |sum_x p(x) ratio(x) - 1|
    pub max_normalization_gap: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ApproximationCheck {
    pub instances: usize,
    pub points: usize,
    /// max |approx_error - (density_ratio - deterministic_weight)^2|
    pub max_identity_gap: f64,
    /// max approx_error after collapsing posteriors to one-hot
    pub max_one_hot_error: f64,
    /// max approx_error under all-ones lambda
    pub max_uniform_lambda_error: f64,
}

fn instance_list(seed: u64, n: usize) -> Vec<(DiscreteJoint, TargetWeights)> {
    (0..n as u64).map(|i| random_instance(seed.wrapping_add(i))).collect()
}

pub fn check_decomposition(
    instances: &[(DiscreteJoint, TargetWeights)],
) -> Result<DecompositionCheck, ImportanceError> {
    let mut out = DecompositionCheck {
        instances: instances.len(),
        ..Default::default()
    };
    for (joint, w) in instances {
        let mut integral = 0.0;
        for (i, x) in joint.support().iter().enumerate() {
            let d = density_ratio(joint, w, x)?;
            let b = brute_ratio(joint, w, x)?;
            out.max_ratio_gap = out.max_ratio_gap.max((d - b).abs());
            integral += joint.p_x(i) * d;
            out.points += 1;
        }
        out.max_normalization_gap = out.max_normalization_gap.max((integral - 1.0).abs());
    }
    Ok(out)
}

pub fn check_approximation(
    instances: &[(DiscreteJoint, TargetWeights)],
) -> Result<ApproximationCheck, ImportanceError> {
    let mut out = ApproximationCheck {
        instances: instances.len(),
        ..Default::default()
    };
    for (joint, w) in instances {
        let hot = one_hot_version(joint);
        let hot_w = renormalize(&w.lambda, &hot);
        let ones = TargetWeights::identity(joint.k());
        for x in joint.support() {
            let d = density_ratio(joint, w, x)?;
            let det = deterministic_weight(joint, w, x)?;
            let e = approx_error(joint, w, x)?;
            out.max_identity_gap = out.max_identity_gap.max((e - (d - det).powi(2)).abs());
            out.max_one_hot_error = out.max_one_hot_error.max(approx_error(&hot, &hot_w, x)?);
            out.max_uniform_lambda_error = out.max_uniform_lambda_error.max(approx_error(joint, &ones, x)?);
            out.points += 1;
        }
    }
    Ok(out)
}

/// Decomposition check over `n` seeded random instances.
pub fn decomposition_oracle(seed: u64, n: usize) -> DecompositionCheck {
    check_decomposition(&instance_list(seed, n)).expect("generated symbols exist")
}

/// Approximation-error check over `n` seeded random instances.
pub fn approximation_oracle(seed: u64, n: usize) -> ApproximationCheck {
    check_approximation(&instance_list(seed, n)).expect("generated symbols exist")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Two symbols with posteriors `post_a` and `post_b`, equal p(x).
    fn two_point(post_a: [f64; 2], post_b: [f64; 2], lambda: [f64; 2]) -> (DiscreteJoint, TargetWeights) {
        let joint = DiscreteJoint::new(
            vec!["a".into(), "b".into()],
            vec![post_a.map(|p| p / 2.0).to_vec(), post_b.map(|p| p / 2.0).to_vec()],
        )
        .unwrap();
        (joint, TargetWeights { lambda: lambda.to_vec() })
    }

    #[test]
    fn ratio_examples() {
        let (j, w) = two_point([1.0, 0.0], [0.5, 0.5], [1.6, 0.4]);
        assert!((density_ratio(&j, &w, "a").unwrap() - 1.6).abs() < 1e-15);
        assert!((density_ratio(&j, &w, "b").unwrap() - 1.0).abs() < 1e-15);
        let ones = TargetWeights::identity(2);
        assert_eq!(density_ratio(&j, &ones, "b").unwrap(), 1.0);
        assert_eq!(brute_ratio(&j, &ones, "a").unwrap(), 1.0);
        assert!(matches!(density_ratio(&j, &w, "zz"), Err(ImportanceError::UnknownSymbol(_))));
    }

    #[test]
    fn degenerate_owner_gets_its_lambda() {
        let (j, _) = random_instance(3);
        let mut table = j.table().to_vec();
        if j.k() < 2 {
            return;
        }
        table[0] = vec![0.0; j.k()];
        table[0][1] = 0.1;
        let total: f64 = table.iter().flatten().sum();
        table.iter_mut().flatten().for_each(|v| *v /= total);
        let j = DiscreteJoint::new(j.support().to_vec(), table).unwrap();
        let w = renormalize(&(1..=j.k()).map(|v| v as f64).collect::<Vec<_>>(), &j);
        let x = &j.support()[0];
        assert!((brute_ratio(&j, &w, x).unwrap() - w.lambda[1]).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_error_examples() {
        let (j, w) = two_point([0.6, 0.4], [0.5, 0.5], [1.6, 0.4]);
        assert_eq!(deterministic_weight(&j, &w, "a").unwrap(), 1.6);
        assert_eq!(deterministic_weight(&j, &w, "b").unwrap(), 1.6);
        assert!((approx_error(&j, &w, "a").unwrap() - 0.2304).abs() < 1e-15);
        let (j, w) = two_point([1.0, 0.0], [0.0, 1.0], [1.6, 0.4]);
        assert_eq!(approx_error(&j, &w, "a").unwrap(), 0.0);
        assert_eq!(deterministic_weight(&j, &w, "b").unwrap(), density_ratio(&j, &w, "b").unwrap());
        let ones = TargetWeights::identity(2);
        assert_eq!(approx_error(&j, &ones, "a").unwrap(), 0.0);
    }

    #[test]
    fn validation() {
        assert!(DiscreteJoint::new(vec!["a".into()], vec![vec![0.5, 0.4]]).is_err());
        assert!(DiscreteJoint::new(vec!["a".into(), "b".into()], vec![vec![1.0], vec![0.0]]).is_err());
        let j = DiscreteJoint::new(vec!["a".into()], vec![vec![0.5, 0.5]]).unwrap();
        assert!(TargetWeights::new(vec![1.0, 1.0], &j).is_ok());
        assert!(TargetWeights::new(vec![1.2, 1.0], &j).is_err());
        assert!(TargetWeights::new(vec![2.0, 0.0], &j).is_err());
    }

    #[test]
    fn oracles_hold_on_random_instances() {
        let d = decomposition_oracle(0, 100);
        assert!(d.max_ratio_gap < 1e-12 && d.max_normalization_gap < 1e-12, "{d:?}");
        let a = approximation_oracle(0, 100);
        assert!(a.max_identity_gap < 1e-12, "{a:?}");
        assert_eq!(a.max_one_hot_error, 0.0);
        assert_eq!(a.max_uniform_lambda_error, 0.0);
    }

    #[test]
    fn instance_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("toy.json");
        std::fs::write(&p, r#"{"support":["a","b"],"p_xc":[[0.3,0.2],[0.1,0.4]],"lambda":[1.25,0.8333333333333334]}"#)
            .unwrap();
        let (j, w) = load_instance(&p).unwrap();
        assert_eq!(j.k(), 2);
        assert!((density_ratio(&j, &w, "a").unwrap() - brute_ratio(&j, &w, "a").unwrap()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn density_equals_brute(seed in any::<u64>()) {
            let (j, w) = random_instance(seed);
            for x in j.support() {
                let d = density_ratio(&j, &w, x).unwrap();
                let b = brute_ratio(&j, &w, x).unwrap();
                prop_assert!((d - b).abs() < 1e-12);
            }
        }
    }
}
