use super::mlp::{Grads, MlpParams};

/// AdamW with decoupled weight decay applied to every parameter.
#[derive(Clone, Debug)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Grads,
    v: Grads,
}

impl AdamW {
    pub fn new(params: &MlpParams, lr: f64, weight_decay: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Grads::zeros_like(params),
            v: Grads::zeros_like(params),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &Grads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (lr, wd, b1, b2, eps) = (self.lr, self.weight_decay, self.beta1, self.beta2, self.eps);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * wd * p[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for l in 0..params.weights.len() {
            update(&mut params.weights[l], &grads.weights[l], &mut self.m.weights[l], &mut self.v.weights[l]);
            update(&mut params.biases[l], &grads.biases[l], &mut self.m.biases[l], &mut self.v.biases[l]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::mlp::{Activation, Head};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = MlpParams::zeros(1, [1, 1, 1, 1], Activation::Relu, Head::Regressor).unwrap();
        p.weights[0][0] = 1.0;
        let mut g = Grads::zeros_like(&p);
        g.weights[0][0] = 0.5;
        g.biases[4][0] = -3.0;
        let mut opt = AdamW::new(&p, 0.1, 0.0, 0.9, 0.999, 1e-30);
        opt.step(&mut p, &g);
        // bias-corrected first step is lr * sign(g)
        assert!((p.weights[0][0] - 0.9).abs() < 1e-12);
        assert!((p.biases[4][0] - 0.1).abs() < 1e-12);
        assert_eq!(p.weights[1][0], 0.0);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = MlpParams::zeros(1, [1, 1, 1, 1], Activation::Relu, Head::Regressor).unwrap();
        p.weights[0][0] = 2.0;
        let g = Grads::zeros_like(&p);
        let mut opt = AdamW::new(&p, 0.1, 0.5, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &g);
        assert!((p.weights[0][0] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }
}
