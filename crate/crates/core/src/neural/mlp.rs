//! Per-sample multilayer perceptron with batch normalization and exact
//! reverse-mode gradients.
//!
//! Each hidden layer is `dense → ReLU → batch norm`; the head is a plain
//! dense layer emitting one logit per representation bit.

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar types the network can run in.
pub trait Real: Float + FromPrimitive + LinalgScalar + ScalarOperand + std::fmt::Debug + Send + Sync + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + LinalgScalar + ScalarOperand + std::fmt::Debug + Send + Sync + 'static {}

fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).unwrap()
}

/// Propagates NaN, unlike `Float::max`.
fn relu<T: Real>(v: T) -> T {
    if v < T::zero() {
        T::zero()
    } else {
        v
    }
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Which features the network sees besides the received I/Q sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFlags {
    pub snr_db_normalized: bool,
}

impl Default for FeatureFlags {
    fn default() -> Self {
        FeatureFlags { snr_db_normalized: true }
    }
}

impl FeatureFlags {
    pub fn width(&self) -> usize {
        2 + self.snr_db_normalized as usize
    }

    /// Writes the feature vector of one sample into `out`.
    pub fn write(&self, re: f32, im: f32, snr_db: f64, out: &mut [f32]) {
        out[0] = re;
        out[1] = im;
        if self.snr_db_normalized {
            out[2] = normalize_snr(snr_db) as f32;
        }
    }
}

/// Maps the −5..30 dB training range onto [−1, 1].
pub fn normalize_snr(snr_db: f64) -> f64 {
    (snr_db - 12.5) / 17.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `in × out`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

impl<T: Real> BatchNorm<T> {
    fn new(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

/// The demapper network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub dense: Vec<Dense<T>>,
    pub norms: Vec<BatchNorm<T>>,
    pub features: FeatureFlags,
}

/// Production model precision.
pub type MlpModel = Mlp<f32>;

/// Activations cached by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct GradientTape<T> {
    input: Array2<T>,
    hidden: Vec<HiddenCache<T>>,
}

#[derive(Debug, Clone)]
struct HiddenCache<T> {
    pre_activation: Array2<T>,
    normalized: Array2<T>,
    inv_std: Array1<T>,
    output: Array2<T>,
}

impl<T> GradientTape<T> {
    /// Normalized activations (before scale and shift) of hidden layer `layer`.
    pub fn normalized(&self, layer: usize) -> &Array2<T> {
        &self.hidden[layer].normalized
    }
}

/// Parameter gradients, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub dense: Vec<Dense<T>>,
    pub gamma: Vec<Array1<T>>,
    pub beta: Vec<Array1<T>>,
}

/// Role of a parameter tensor, used to decide weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Scale,
    Shift,
}

impl<T: Real> Mlp<T> {
    /// He-uniform dense weights, zero biases, identity batch norms and a
    /// zero head, so every initial logit is 0.
    pub fn new(sizes: &[usize], features: FeatureFlags, seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Domain("a network needs at least input and output sizes".into()));
        }
        if sizes[0] != features.width() {
            return Err(Error::Shape { expected: features.width(), actual: sizes[0] });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes.len() - 1;
        let dense = (0..layers)
            .map(|l| {
                let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
                let weight = if l + 1 == layers {
                    Array2::zeros((fan_in, fan_out))
                } else {
                    let limit = (6.0 / fan_in as f64).sqrt();
                    Array2::from_shape_fn((fan_in, fan_out), |_| cast(rng.random_range(-limit..limit)))
                };
                Dense { weight, bias: Array1::zeros(fan_out) }
            })
            .collect();
        let norms = sizes[1..layers].iter().map(|&w| BatchNorm::new(w)).collect();
        Ok(Mlp { dense, norms, features })
    }

    /// Layer widths `[in, hidden…, out]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.dense[0].weight.nrows()];
        s.extend(self.dense.iter().map(|d| d.weight.ncols()));
        s
    }

    pub fn input_width(&self) -> usize {
        self.dense[0].weight.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.dense.last().unwrap().weight.ncols()
    }

    fn check_input(&self, input: &ArrayView2<T>, mode: Mode) -> Result<()> {
        if input.ncols() != self.input_width() {
            return Err(Error::Shape { expected: self.input_width(), actual: input.ncols() });
        }
        if mode == Mode::Train && input.nrows() < 2 {
            return Err(Error::Domain("train mode needs a batch of at least 2 for batch statistics".into()));
        }
        Ok(())
    }

    /// Inference forward pass with running batch-norm statistics.
    pub fn infer(&self, input: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&input, Mode::Infer)?;
        let eps = cast::<T>(BN_EPS);
        let mut h = input.to_owned();
        for (layer, bn) in self.dense.iter().zip(&self.norms) {
            let mut z = h.dot(&layer.weight) + &layer.bias;
            z.mapv_inplace(relu);
            let scale = Zip::from(&bn.gamma).and(&bn.running_var).map_collect(|&g, &v| g / (v + eps).sqrt());
            let shift = Zip::from(&bn.beta)
                .and(&bn.running_mean)
                .and(&scale)
                .map_collect(|&b, &m, &s| b - m * s);
            h = z * &scale + &shift;
        }
        let head = self.dense.last().unwrap();
        Ok(h.dot(&head.weight) + &head.bias)
    }

    /// Train-mode forward pass: batch statistics, running-stat update, and a
    /// tape for [`Mlp::backward`].
    pub fn forward_train(&mut self, input: ArrayView2<T>) -> Result<(Array2<T>, GradientTape<T>)> {
        self.check_input(&input, Mode::Train)?;
        let n = input.nrows();
        let eps = cast::<T>(BN_EPS);
        let momentum = cast::<T>(BN_MOMENTUM);
        let unbias = cast::<T>(n as f64 / (n as f64 - 1.0));
        let mut hidden = Vec::with_capacity(self.norms.len());
        let mut h = input.to_owned();
        let layers = self.dense.len();
        for (layer, bn) in self.dense[..layers - 1].iter().zip(self.norms.iter_mut()) {
            let pre = h.dot(&layer.weight) + &layer.bias;
            let act = pre.mapv(relu);
            let mean = act.mean_axis(Axis(0)).unwrap();
            let centered = &act - &mean;
            let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
            let inv_std = var.mapv(|v| (v + eps).sqrt().recip());
            let normalized = centered * &inv_std;
            let output = &normalized * &bn.gamma + &bn.beta;
            Zip::from(&mut bn.running_mean)
                .and(&mean)
                .for_each(|r, &m| *r = *r + momentum * (m - *r));
            Zip::from(&mut bn.running_var)
                .and(&var)
                .for_each(|r, &v| *r = *r + momentum * (v * unbias - *r));
            h = output.clone();
            hidden.push(HiddenCache { pre_activation: pre, normalized, inv_std, output });
        }
        let head = self.dense.last().unwrap();
        let out = h.dot(&head.weight) + &head.bias;
        Ok((out, GradientTape { input: input.to_owned(), hidden }))
    }

    /// Either forward pass by mode; train mode discards the tape.
    pub fn forward(&mut self, input: ArrayView2<T>, mode: Mode) -> Result<Array2<T>> {
        match mode {
            Mode::Train => self.forward_train(input).map(|(o, _)| o),
            Mode::Infer => self.infer(input),
        }
    }

    /// Parameter gradients given `d loss / d output`.
    pub fn backward(&self, tape: &GradientTape<T>, d_out: ArrayView2<T>) -> Grads<T> {
        let layers = self.dense.len();
        let n = cast::<T>(d_out.nrows() as f64);
        let mut dense_grads: Vec<Dense<T>> = Vec::with_capacity(layers);
        let mut gammas = Vec::with_capacity(layers - 1);
        let mut betas = Vec::with_capacity(layers - 1);

        let head_input = tape.hidden.last().map_or(&tape.input, |c| &c.output);
        dense_grads.push(Dense {
            weight: head_input.t().dot(&d_out),
            bias: d_out.sum_axis(Axis(0)),
        });
        let mut d_h = d_out.dot(&self.dense[layers - 1].weight.t());

        for l in (0..layers - 1).rev() {
            let cache = &tape.hidden[l];
            let bn = &self.norms[l];
            gammas.push((&d_h * &cache.normalized).sum_axis(Axis(0)));
            betas.push(d_h.sum_axis(Axis(0)));
            let d_xhat = &d_h * &bn.gamma;
            let sum_d = d_xhat.sum_axis(Axis(0));
            let sum_dx = (&d_xhat * &cache.normalized).sum_axis(Axis(0));
            // d act = inv_std/N · (N·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
            let mut d_act = d_xhat * n - &sum_d - &cache.normalized * &sum_dx;
            d_act = d_act * &cache.inv_std.mapv(|s| s / n);
            Zip::from(&mut d_act)
                .and(&cache.pre_activation)
                .for_each(|d, &z| {
                    if z <= T::zero() {
                        *d = T::zero();
                    }
                });
            let layer_input = if l == 0 { &tape.input } else { &tape.hidden[l - 1].output };
            dense_grads.push(Dense { weight: layer_input.t().dot(&d_act), bias: d_act.sum_axis(Axis(0)) });
            if l > 0 {
                d_h = d_act.dot(&self.dense[l].weight.t());
            }
        }
        dense_grads.reverse();
        gammas.reverse();
        betas.reverse();
        Grads { dense: dense_grads, gamma: gammas, beta: betas }
    }

    /// Visits every trainable tensor with its gradient, in a fixed order.
    pub fn visit_params(&mut self, grads: &Grads<T>, mut f: impl FnMut(ParamKind, &mut [T], &[T])) {
        for (layer, g) in self.dense.iter_mut().zip(&grads.dense) {
            f(ParamKind::Weight, layer.weight.as_slice_mut().unwrap(), g.weight.as_slice().unwrap());
            f(ParamKind::Bias, layer.bias.as_slice_mut().unwrap(), g.bias.as_slice().unwrap());
        }
        for ((bn, dg), db) in self.norms.iter_mut().zip(&grads.gamma).zip(&grads.beta) {
            f(ParamKind::Scale, bn.gamma.as_slice_mut().unwrap(), dg.as_slice().unwrap());
            f(ParamKind::Shift, bn.beta.as_slice_mut().unwrap(), db.as_slice().unwrap());
        }
    }

    /// Sizes of the tensors visited by [`Mlp::visit_params`].
    pub fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for d in &self.dense {
            out.push(d.weight.len());
            out.push(d.bias.len());
        }
        for bn in &self.norms {
            out.push(bn.gamma.len());
            out.push(bn.beta.len());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.dense.iter().all(|d| d.weight.iter().chain(&d.bias).all(|v| v.is_finite()))
            && self
                .norms
                .iter()
                .all(|b| b.gamma.iter().chain(&b.beta).chain(&b.running_mean).chain(&b.running_var).all(|v| v.is_finite()))
    }

    /// Converts parameters to another precision.
    pub fn cast<U: Real>(&self) -> Mlp<U> {
        let c1 = |a: &Array1<T>| a.mapv(|v| U::from_f64(v.to_f64().unwrap()).unwrap());
        let c2 = |a: &Array2<T>| a.mapv(|v| U::from_f64(v.to_f64().unwrap()).unwrap());
        Mlp {
            dense: self.dense.iter().map(|d| Dense { weight: c2(&d.weight), bias: c1(&d.bias) }).collect(),
            norms: self
                .norms
                .iter()
                .map(|b| BatchNorm {
                    gamma: c1(&b.gamma),
                    beta: c1(&b.beta),
                    running_mean: c1(&b.running_mean),
                    running_var: c1(&b.running_var),
                })
                .collect(),
            features: self.features,
        }
    }
}
