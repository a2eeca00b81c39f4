use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adamw::AdamW;
use super::mlp::{default_hidden, Activation, Grads, Head, MlpParams, Target};
use super::ProbeError;
use crate::pseudolabel::ProbeSet;
use crate::vector::argmax;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub init_seed: u64,
    pub activation: Activation,
    /// Hidden widths; `None` picks [`default_hidden`] for the input size.
    pub hidden: Option<[usize; 4]>,
    /// Regression only: weight each squared error by its target entropy.
    pub entropy_weighted: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 3,
            batch_size: 1,
            shuffle_seed: 0,
            init_seed: 0,
            activation: Activation::Relu,
            hidden: None,
            entropy_weighted: false,
        }
    }
}

impl TrainConfig {
    /// Regressor defaults: mini-batches of 32 at a 10x learning rate, which
    /// keeps the step budget of three epochs useful after batching.
    pub fn regressor_default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), ProbeError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ProbeError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(ProbeError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(ProbeError::InvalidConfig("adam betas must be in [0, 1)".into()));
        }
        Ok(())
    }

    fn optimizer(&self, p: &MlpParams) -> AdamW {
        AdamW::new(
            p,
            self.learning_rate,
            self.weight_decay,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
        )
    }
}

/// Loss per optimizer step and one holdout metric per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub step_loss: Vec<f64>,
    /// Holdout accuracy (classifier) or MSE (regressor) after each epoch.
    pub holdout_metric: Vec<f64>,
    pub final_train_metric: f64,
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
}

fn rows<'a>(probe: &'a ProbeSet, idx: &[usize]) -> Vec<&'a [f64]> {
    idx.iter().map(|&i| probe.features[i].as_slice()).collect()
}

pub fn accuracy(model: &MlpParams, xs: &[&[f64]], labels: &[usize]) -> Result<f64, ProbeError> {
    if xs.is_empty() {
        return Ok(f64::NAN);
    }
    let hits = xs
        .par_iter()
        .zip(labels)
        .map(|(x, &y)| Ok(usize::from(argmax(&model.forward(x)?) == y)))
        .collect::<Result<Vec<usize>, ProbeError>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / xs.len() as f64)
}

pub fn mse(model: &MlpParams, xs: &[&[f64]], targets: &[f64]) -> Result<f64, ProbeError> {
    if xs.is_empty() {
        return Ok(f64::NAN);
    }
    let errs = xs
        .par_iter()
        .zip(targets)
        .map(|(x, &t)| Ok((model.forward(x)?[0] - t).powi(2)))
        .collect::<Result<Vec<f64>, ProbeError>>()?;
    Ok(errs.iter().sum::<f64>() / xs.len() as f64)
}

/// Train a classifier on pseudo-labels with one AdamW step per sample.
pub fn train_domain_predictor(
    probe: &ProbeSet,
    cfg: &TrainConfig,
) -> Result<(MlpParams, TrainTrace), ProbeError> {
    cfg.validate()?;
    if cfg.batch_size != 1 {
        return Err(ProbeError::InvalidConfig(
            "domain predictor trains on single-sample batches".into(),
        ));
    }
    if probe.is_empty() {
        return Err(ProbeError::EmptyProbeSet);
    }
    let distinct: BTreeSet<usize> = probe.labels.iter().copied().collect();
    if distinct.len() < 2 || probe.n_classes < 2 {
        return Err(ProbeError::DegenerateLabels);
    }
    let (train, hold) = probe.split();
    if train.is_empty() {
        return Err(ProbeError::EmptyProbeSet);
    }
    let d = probe.features[0].len();
    let head = Head::Classifier {
        classes: probe.n_classes,
    };
    let hidden = cfg.hidden.unwrap_or_else(|| default_hidden(d));
    let mut model = MlpParams::init(d, hidden, cfg.activation, head, cfg.init_seed)?;
    let mut opt = cfg.optimizer(&model);
    let mut grads = Grads::zeros_like(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order = train.clone();
    let hold_x = rows(probe, &hold);
    let hold_y: Vec<usize> = hold.iter().map(|&i| probe.labels[i]).collect();
    let mut trace = TrainTrace::default();
    for _ in 0..cfg.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        for &i in &order {
            grads.clear();
            let loss = model.backprop(&probe.features[i], Target::Class(probe.labels[i]), &mut grads)?;
            opt.step(&mut model, &grads);
            trace.step_loss.push(loss);
        }
        trace.holdout_metric.push(accuracy(&model, &hold_x, &hold_y)?);
        trace.epoch_seconds.push(t0.elapsed().as_secs_f64());
    }
    let train_y: Vec<usize> = train.iter().map(|&i| probe.labels[i]).collect();
    trace.final_train_metric = accuracy(&model, &rows(probe, &train), &train_y)?;
    model.trained = true;
    Ok((model, trace))
}

/// Entropy of `classifier`'s posterior for every row, computed in parallel.
pub fn entropy_targets(classifier: &MlpParams, xs: &[&[f64]]) -> Result<Vec<f64>, ProbeError> {
    xs.par_iter().map(|x| classifier.predictive_entropy(x)).collect()
}

/// Fit a regressor to the frozen classifier's predictive entropy.
pub fn train_entropy_regressor(
    probe: &ProbeSet,
    psi_dom: &MlpParams,
    cfg: &TrainConfig,
) -> Result<(MlpParams, TrainTrace), ProbeError> {
    cfg.validate()?;
    if !matches!(psi_dom.head, Head::Classifier { .. }) {
        return Err(ProbeError::WrongHead("classifier"));
    }
    if !psi_dom.trained {
        return Err(ProbeError::UntrainedClassifier);
    }
    if probe.is_empty() {
        return Err(ProbeError::EmptyProbeSet);
    }
    let all: Vec<&[f64]> = probe.features.iter().map(Vec::as_slice).collect();
    let targets = entropy_targets(psi_dom, &all)?;
    let (train, hold) = probe.split();
    if train.is_empty() {
        return Err(ProbeError::EmptyProbeSet);
    }
    let d = psi_dom.input_dim();
    let hidden: [usize; 4] = psi_dom.layer_dims[1..5].try_into().expect("5-layer probe");
    let mut model = MlpParams::init(d, hidden, psi_dom.activation, Head::Regressor, cfg.init_seed)?;
    let mut opt = cfg.optimizer(&model);
    let mut grads = Grads::zeros_like(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order = train.clone();
    let hold_x = rows(probe, &hold);
    let hold_t: Vec<f64> = hold.iter().map(|&i| targets[i]).collect();
    let mut trace = TrainTrace::default();
    for _ in 0..cfg.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            let mut loss = 0.0;
            for &i in batch {
                let weight = if cfg.entropy_weighted { targets[i] } else { 1.0 };
                loss += model.backprop(
                    &probe.features[i],
                    Target::Value {
                        target: targets[i],
                        weight,
                    },
                    &mut grads,
                )?;
            }
            let n = batch.len() as f64;
            grads.scale(1.0 / n);
            opt.step(&mut model, &grads);
            trace.step_loss.push(loss / n);
        }
        trace.holdout_metric.push(mse(&model, &hold_x, &hold_t)?);
        trace.epoch_seconds.push(t0.elapsed().as_secs_f64());
    }
    let train_t: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
    trace.final_train_metric = mse(&model, &rows(probe, &train), &train_t)?;
    model.trained = true;
    Ok((model, trace))
}
