use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{entropy, softmax, ProbeError};

/// Affine layers per probe: four hidden plus one head.
pub const N_LAYERS: usize = 5;

const FULL_WIDTHS: [usize; 4] = [1024, 512, 256, 64];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative given the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Classifier { classes: usize },
    Regressor,
}

impl Head {
    pub fn out_dim(self) -> usize {
        match self {
            Head::Classifier { classes } => classes,
            Head::Regressor => 1,
        }
    }
}

/// Hidden widths `[1024, 512, 256, 64]`, scaled by `d / 256` when the input
/// is narrower than 256 (rounded up, at least 1).
pub fn default_hidden(input_dim: usize) -> [usize; 4] {
    if input_dim >= 256 {
        return FULL_WIDTHS;
    }
    FULL_WIDTHS.map(|w| (w * input_dim).div_ceil(256).max(1))
}

/// Parameters of a 5-layer perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layer_dims: Vec<usize>,
    /// Layer `l` is `layer_dims[l+1] x layer_dims[l]`, row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
    pub head: Head,
    pub trained: bool,
}

/// Per-layer pre-activations and activations from one forward pass.
pub struct ForwardCache {
    /// `acts[0]` is the input; `acts[l+1]` the output of layer `l`
    /// (activation applied for hidden layers, raw for the head).
    pub acts: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

/// What a single example is scored against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    /// Regression target with a per-sample loss weight.
    Value { target: f64, weight: f64 },
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl MlpParams {
    /// All-zero parameters with the given shape.
    pub fn zeros(
        input_dim: usize,
        hidden: [usize; 4],
        activation: Activation,
        head: Head,
    ) -> Result<Self, ProbeError> {
        if input_dim == 0 || hidden.contains(&0) || head.out_dim() == 0 {
            return Err(ProbeError::InvalidConfig("layer widths must be positive".into()));
        }
        let mut layer_dims = vec![input_dim];
        layer_dims.extend_from_slice(&hidden);
        layer_dims.push(head.out_dim());
        let weights = (0..N_LAYERS)
            .map(|l| vec![0.0; layer_dims[l] * layer_dims[l + 1]])
            .collect();
        let biases = (0..N_LAYERS).map(|l| vec![0.0; layer_dims[l + 1]]).collect();
        Ok(Self {
            layer_dims,
            weights,
            biases,
            activation,
            head,
            trained: false,
        })
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases,
    /// drawn layer by layer from a seeded stream.
    pub fn init(
        input_dim: usize,
        hidden: [usize; 4],
        activation: Activation,
        head: Head,
        seed: u64,
    ) -> Result<Self, ProbeError> {
        let mut p = Self::zeros(input_dim, hidden, activation, head)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..N_LAYERS {
            let bound = 1.0 / (p.layer_dims[l] as f64).sqrt();
            for w in p.weights[l].iter_mut() {
                *w = rng.random_range(-bound..bound);
            }
            for b in p.biases[l].iter_mut() {
                *b = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Round every parameter through `f32`, matching what a checkpoint holds.
    pub fn round_to_f32(&mut self) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x = f64::from(*x as f32));
        }
    }

    pub fn check_input(&self, x: &[f64]) -> Result<(), ProbeError> {
        if x.len() != self.input_dim() {
            return Err(ProbeError::DimMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward_cache(&self, x: &[f64]) -> ForwardCache {
        let mut acts = Vec::with_capacity(N_LAYERS + 1);
        let mut pre = Vec::with_capacity(N_LAYERS);
        acts.push(x.to_vec());
        for l in 0..N_LAYERS {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let a = &acts[l];
            let w = &self.weights[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    self.biases[l][o] + row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            let out = if l + 1 < N_LAYERS {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            acts.push(out);
        }
        ForwardCache { acts, pre }
    }

    /// Logits for a classifier; the softplus output for a regressor.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ProbeError> {
        self.check_input(x)?;
        let mut out = self.forward_cache(x).acts.pop().expect("has output");
        if self.head == Head::Regressor {
            out[0] = softplus(out[0]);
        }
        Ok(out)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>, ProbeError> {
        if !matches!(self.head, Head::Classifier { .. }) {
            return Err(ProbeError::WrongHead("classifier"));
        }
        softmax(&self.forward(x)?)
    }

    /// Entropy of the classifier's posterior at `x`.
    pub fn predictive_entropy(&self, x: &[f64]) -> Result<f64, ProbeError> {
        entropy(&self.predict_proba(x)?)
    }

    /// Loss for one example: cross-entropy for a classifier,
    /// `weight * (softplus(z) - target)^2` for a regressor.
    pub fn loss(&self, x: &[f64], target: Target) -> Result<f64, ProbeError> {
        self.check_input(x)?;
        let cache = self.forward_cache(x);
        Ok(self.loss_from_output(cache.acts.last().expect("has output"), target)?.0)
    }

    /// Returns the loss and its gradient with respect to the head's raw output.
    fn loss_from_output(&self, z: &[f64], target: Target) -> Result<(f64, Vec<f64>), ProbeError> {
        match (self.head, target) {
            (Head::Classifier { classes }, Target::Class(y)) => {
                if y >= classes {
                    return Err(ProbeError::InvalidConfig(format!("label {y} >= {classes}")));
                }
                let p = softmax(z)?;
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                let mut g = p;
                g[y] -= 1.0;
                Ok((lse - z[y], g))
            }
            (Head::Regressor, Target::Value { target, weight }) => {
                let yhat = softplus(z[0]);
                let r = yhat - target;
                Ok((weight * r * r, vec![2.0 * weight * r * sigmoid(z[0])]))
            }
            _ => Err(ProbeError::WrongHead("target kind does not match head")),
        }
    }

    /// Loss and parameter gradients for one example, accumulated into `grads`.
    pub fn backprop(&self, x: &[f64], target: Target, grads: &mut Grads) -> Result<f64, ProbeError> {
        self.check_input(x)?;
        let cache = self.forward_cache(x);
        let (loss, mut delta) =
            self.loss_from_output(cache.acts.last().expect("has output"), target)?;
        for l in (0..N_LAYERS).rev() {
            let n_in = self.layer_dims[l];
            let a_prev = &cache.acts[l];
            let gw = &mut grads.weights[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(a_prev) {
                    *g += d * a;
                }
            }
            for (g, d) in grads.biases[l].iter_mut().zip(&delta) {
                *g += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.weights[l];
            let mut next = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                for (n, wi) in next.iter_mut().zip(row) {
                    *n += wi * d;
                }
            }
            for (n, z) in next.iter_mut().zip(&cache.pre[l - 1]) {
                *n *= self.activation.derivative(*z);
            }
            delta = next;
        }
        Ok(loss)
    }
}

/// Gradient buffers shaped like [`MlpParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        Self {
            weights: p.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: p.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_classifier_is_uniform() {
        let p = MlpParams::zeros(3, [4, 4, 4, 4], Activation::Relu, Head::Classifier { classes: 4 })
            .unwrap();
        assert_eq!(p.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0; 4]);
        assert_eq!(p.predict_proba(&[1.0, -2.0, 3.0]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn relu_blocks_negative_identity_chain() {
        let mut p =
            MlpParams::zeros(1, [1, 1, 1, 1], Activation::Relu, Head::Classifier { classes: 1 })
                .unwrap();
        for w in p.weights.iter_mut() {
            w[0] = 1.0;
        }
        let cache = p.forward_cache(&[-1.0]);
        assert_eq!(cache.acts[1], vec![0.0]);
        assert_eq!(p.forward(&[-1.0]).unwrap(), vec![0.0]);
        assert_eq!(p.forward(&[2.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn random_outputs_finite_and_regressor_nonnegative() {
        for seed in 0..5 {
            let c = MlpParams::init(6, [8, 7, 5, 3], Activation::Tanh, Head::Classifier { classes: 3 }, seed)
                .unwrap();
            let r = MlpParams::init(6, [8, 7, 5, 3], Activation::Relu, Head::Regressor, seed).unwrap();
            let x = [1e3, -1e3, 0.5, 2.0, -7.0, 1.0];
            assert!(c.forward(&x).unwrap().iter().all(|v| v.is_finite()));
            let y = r.forward(&x).unwrap();
            assert!(y[0].is_finite() && y[0] >= 0.0);
        }
    }

    #[test]
    fn dim_mismatch() {
        let p = MlpParams::init(3, [2, 2, 2, 2], Activation::Relu, Head::Regressor, 0).unwrap();
        assert!(matches!(p.forward(&[1.0]), Err(ProbeError::DimMismatch { .. })));
    }

    #[test]
    fn default_widths() {
        assert_eq!(default_hidden(4096), [1024, 512, 256, 64]);
        assert_eq!(default_hidden(256), [1024, 512, 256, 64]);
        assert_eq!(default_hidden(32), [128, 64, 32, 8]);
        assert_eq!(default_hidden(1), [4, 2, 1, 1]);
    }

    #[test]
    fn softplus_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
