use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::mlp::{default_hidden, Activation, Grads, Head, MlpParams, Target, N_LAYERS};
use super::ProbeError;

/// Pre-activations closer than this to a relu kink get pushed away.
const KINK_MARGIN: f64 = 1e-2;

/// Shift hidden biases so no relu pre-activation at `x` sits within
/// [`KINK_MARGIN`] of zero. Works front to back because each shift moves
/// every later layer.
pub fn nudge_relu_kinks(params: &mut MlpParams, x: &[f64]) {
    if params.activation != Activation::Relu {
        return;
    }
    for l in 0..N_LAYERS - 1 {
        let cache = params.forward_cache(x);
        for (o, z) in cache.pre[l].iter().enumerate() {
            if z.abs() < KINK_MARGIN {
                let side = if *z >= 0.0 { 1.0 } else { -1.0 };
                params.biases[l][o] += side * KINK_MARGIN - z;
            }
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

/// Largest relative error between backprop and central differences over
/// every parameter. Runs on a nudged copy of `params`.
pub fn grad_check(params: &MlpParams, x: &[f64], target: Target, eps: f64) -> Result<f64, ProbeError> {
    let mut p = params.clone();
    p.check_input(x)?;
    nudge_relu_kinks(&mut p, x);
    let mut analytic = Grads::zeros_like(&p);
    p.backprop(x, target, &mut analytic)?;

    let mut worst = 0.0f64;
    for l in 0..N_LAYERS {
        for i in 0..p.weights[l].len() {
            let orig = p.weights[l][i];
            p.weights[l][i] = orig + eps;
            let up = p.loss(x, target)?;
            p.weights[l][i] = orig - eps;
            let down = p.loss(x, target)?;
            p.weights[l][i] = orig;
            worst = worst.max(rel_err(analytic.weights[l][i], (up - down) / (2.0 * eps)));
        }
        for i in 0..p.biases[l].len() {
            let orig = p.biases[l][i];
            p.biases[l][i] = orig + eps;
            let up = p.loss(x, target)?;
            p.biases[l][i] = orig - eps;
            let down = p.loss(x, target)?;
            p.biases[l][i] = orig;
            worst = worst.max(rel_err(analytic.biases[l][i], (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub dim: usize,
    pub draws: usize,
    pub eps: f64,
    pub classifier_max_rel_err: f64,
    pub regressor_max_rel_err: f64,
}

impl GradCheckReport {
    pub fn max(&self) -> f64 {
        self.classifier_max_rel_err.max(self.regressor_max_rel_err)
    }
}

/// Check both heads on `draws` random parameter sets (default widths for
/// `dim`, alternating relu/tanh) with standard normal inputs.
pub fn random_grad_check(dim: usize, draws: usize, eps: f64, seed: u64) -> Result<GradCheckReport, ProbeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        dim,
        draws,
        eps,
        classifier_max_rel_err: 0.0,
        regressor_max_rel_err: 0.0,
    };
    let hidden = default_hidden(dim);
    for draw in 0..draws {
        let act = if draw % 2 == 0 { Activation::Relu } else { Activation::Tanh };
        let x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let cls = MlpParams::init(dim, hidden, act, Head::Classifier { classes: 4 }, rng.random())?;
        let e = grad_check(&cls, &x, Target::Class(rng.random_range(0..4)), eps)?;
        report.classifier_max_rel_err = report.classifier_max_rel_err.max(e);
        let reg = MlpParams::init(dim, hidden, act, Head::Regressor, rng.random())?;
        let t = Target::Value {
            target: rng.random_range(0.0..4f64.ln()),
            weight: 1.0,
        };
        report.regressor_max_rel_err = report.regressor_max_rel_err.max(grad_check(&reg, &x, t, eps)?);
    }
    Ok(report)
}
