//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::mlp::{Grads, Mlp, ParamKind, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Applied to dense weights only.
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 0.003, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, param_sizes: &[usize]) -> Self {
        AdamW {
            config,
            step: 0,
            m: param_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: param_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// One update of a single tensor; `t` is the 1-based step count.
    pub fn update_tensor(
        config: &AdamWConfig,
        t: u32,
        decay: bool,
        param: &mut [T],
        grad: &[T],
        m: &mut [T],
        v: &mut [T],
    ) {
        let c = |x: f64| T::from_f64(x).unwrap();
        let (b1, b2) = (c(config.beta1), c(config.beta2));
        let bc1 = c(1.0 - config.beta1.powi(t as i32));
        let bc2 = c(1.0 - config.beta2.powi(t as i32));
        let lr = c(config.lr);
        let eps = c(config.eps);
        let shrink = c(1.0 - config.lr * config.weight_decay);
        let one = T::one();
        for i in 0..param.len() {
            let g = grad[i];
            if decay {
                param[i] = param[i] * shrink;
            }
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    pub fn step(&mut self, model: &mut Mlp<T>, grads: &Grads<T>) {
        self.step += 1;
        let t = self.step;
        let config = self.config;
        let mut idx = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_params(grads, |kind, p, g| {
            Self::update_tensor(&config, t, kind == ParamKind::Weight, p, g, &mut ms[idx], &mut vs[idx]);
            idx += 1;
        });
    }
}
