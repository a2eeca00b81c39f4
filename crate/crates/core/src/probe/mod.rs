//! Probe networks: a from-scratch 5-layer perceptron, AdamW, and the two
//! training stages (domain classifier, entropy regressor).

mod adamw;
mod checkpoint;
mod gradcheck;
mod mlp;
mod train;

use thiserror::Error;

pub use adamw::AdamW;
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use gradcheck::{grad_check, nudge_relu_kinks, random_grad_check, GradCheckReport};
pub use mlp::{default_hidden, softplus, Activation, ForwardCache, Grads, Head, MlpParams, Target, N_LAYERS};
pub use train::{
    accuracy, entropy_targets, mse, train_domain_predictor, train_entropy_regressor, TrainConfig,
    TrainTrace,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("input dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("wrong head: expected {0}")]
    WrongHead(&'static str),
    #[error("classifier has not been trained")]
    UntrainedClassifier,
    #[error("need at least two distinct labels")]
    DegenerateLabels,
    #[error("probe set is empty")]
    EmptyProbeSet,
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("not a probability distribution")]
    InvalidDistribution,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, ProbeError> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFiniteInput);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Natural-log Shannon entropy, with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> Result<f64, ProbeError> {
    let valid = !probs.is_empty()
        && probs.iter().all(|p| p.is_finite() && *p >= -1e-9 && *p <= 1.0 + 1e-9)
        && (probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    if !valid {
        return Err(ProbeError::InvalidDistribution);
    }
    let h: f64 = probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(h.clamp(0.0, (probs.len() as f64).ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0; 4]).unwrap(), vec![0.25; 4]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert_eq!(softmax(&[f64::NAN, 0.0]), Err(ProbeError::NonFiniteInput));
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[0.5, 0.6]), Err(ProbeError::InvalidDistribution));
        assert_eq!(entropy(&[-0.1, 1.1]), Err(ProbeError::InvalidDistribution));
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(logits in prop::collection::vec(-50.0f64..50.0, 1..8), c in -100.0f64..100.0) {
            let a = softmax(&logits).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            let b = softmax(&shifted).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert_eq!(crate::vector::argmax(&a), crate::vector::argmax(&b));
        }

        #[test]
        fn entropy_bounded(logits in prop::collection::vec(-20.0f64..20.0, 1..8)) {
            let p = softmax(&logits).unwrap();
            let h = entropy(&p).unwrap();
            prop_assert!(h >= 0.0 && h <= (p.len() as f64).ln() + 1e-12);
        }
    }
}
