//! Probability algebra: representation logits to symbol log-probabilities,
//! symbol log-probabilities to bit LLRs, the pseudo-objective, and the exact
//! AWGN oracles.
//!
//! All LLRs are `log P(bit = 1) / P(bit = 0)`. A representation frame holds
//! one logit per layout bit with the same convention.

use num_complex::Complex64;

use crate::bits::BitString;
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::representation::{RepresentationLayout, SymbolCode};

/// Magnitude at which output LLRs are clamped.
pub const LLR_MAX: f64 = 40.0;

/// `log σ(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log Σ exp(v)`; `-∞` for an empty slice or all `-∞` entries.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    log_sum_exp_iter(values.iter().copied())
}

fn log_sum_exp_iter(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-symbol log-probabilities of one constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolLogProbs(pub Vec<f64>);

impl SymbolLogProbs {
    /// Index of the most probable symbol (lowest index on ties).
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Bit LLRs of one received sample under some bit mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct BitLlrs {
    pub values: Vec<f64>,
    /// Bits whose value was clamped to `±LLR_MAX`.
    pub saturated: Vec<bool>,
}

impl BitLlrs {
    /// Hard bit decisions from the LLR signs (`LLR > 0` decides 1).
    pub fn hard_bits(&self) -> BitString {
        BitString(self.values.iter().map(|&l| l > 0.0).collect())
    }
}

/// `log P(s)` for one symbol code: sum of per-bit log-Bernoulli factors.
pub fn code_logprob(frame: &[f64], code: &SymbolCode) -> f64 {
    code.iter()
        .map(|(k, bit)| log_sigmoid(if bit { frame[k] } else { -frame[k] }))
        .sum()
}

/// Symbol log-probabilities of constellation `id` as the product of the
/// hierarchical classifier's bit probabilities. No normalization is applied.
pub fn symbol_logprobs_from_repr(frame: &[f64], layout: &RepresentationLayout, id: &str) -> Result<SymbolLogProbs> {
    if frame.len() != layout.total_bits() {
        return Err(Error::Shape { expected: layout.total_bits(), actual: frame.len() });
    }
    let entry = layout.entry(id)?;
    Ok(SymbolLogProbs(entry.codes.iter().map(|c| code_logprob(frame, c)).collect()))
}

/// Marginalizes symbol log-probabilities into bit LLRs under `mapping`.
///
/// Inputs are clamped to `≤ 0` (probabilities at most one) before the
/// log-sum-exp; outputs are clamped to `±LLR_MAX`.
pub fn bit_llrs_from_symbols(slp: &SymbolLogProbs, mapping: &[BitString]) -> Result<BitLlrs> {
    if slp.0.len() != mapping.len() {
        return Err(Error::Shape { expected: mapping.len(), actual: slp.0.len() });
    }
    let bits = mapping.first().map_or(0, BitString::len);
    let clipped: Vec<f64> = slp.0.iter().map(|&v| v.min(0.0)).collect();
    let mut values = Vec::with_capacity(bits);
    let mut saturated = Vec::with_capacity(bits);
    for i in 0..bits {
        let side = |b: bool| {
            log_sum_exp_iter(
                clipped
                    .iter()
                    .zip(mapping)
                    .filter(move |(_, m)| m.bit(i) == b)
                    .map(|(&v, _)| v),
            )
        };
        let llr = side(true) - side(false);
        let (v, sat) = if llr.is_nan() {
            // both sides empty or impossible
            (0.0, true)
        } else if llr.abs() > LLR_MAX {
            (LLR_MAX.copysign(llr), true)
        } else {
            (llr, false)
        };
        values.push(v);
        saturated.push(sat);
    }
    Ok(BitLlrs { values, saturated })
}

/// `−log P(ŝ)`: the masked binary cross-entropy of the frame against the
/// ground-truth symbol's representation code.
pub fn pseudo_loss(frame: &[f64], layout: &RepresentationLayout, id: &str, true_symbol: usize) -> Result<f64> {
    if frame.len() != layout.total_bits() {
        return Err(Error::Shape { expected: layout.total_bits(), actual: frame.len() });
    }
    Ok(-code_logprob(frame, layout.repr_of_symbol(id, true_symbol)?))
}

/// Adds `∂(pseudo loss)/∂logit = σ(logit) − bit` on the code's positions, scaled by `weight`.
pub fn pseudo_loss_grad(frame: &[f64], code: &SymbolCode, weight: f64, grad: &mut [f64]) {
    for (k, bit) in code.iter() {
        grad[k] += weight * (sigmoid(frame[k]) - if bit { 1.0 } else { 0.0 });
    }
}

/// Nearest constellation point; the lowest index wins ties.
pub fn hard_decision(x: Complex64, c: &Constellation) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (s, p) in c.points().iter().enumerate() {
        let d = (x - p).norm_sqr();
        if d < best_d {
            best = s;
            best_d = d;
        }
    }
    best
}

/// Exact symbol posterior and bit LLRs for AWGN with complex noise variance `noise_var`.
pub fn exact_awgn_llrs(x: Complex64, c: &Constellation, noise_var: f64) -> Result<(SymbolLogProbs, BitLlrs)> {
    if !(noise_var > 0.0) {
        return Err(Error::Domain(format!("noise variance must be positive, got {noise_var}")));
    }
    let metrics: Vec<f64> = c.points().iter().map(|p| -(x - p).norm_sqr() / noise_var).collect();
    let norm = log_sum_exp(&metrics);
    let slp = SymbolLogProbs(metrics.into_iter().map(|m| m - norm).collect());
    let llrs = bit_llrs_from_symbols(&slp, c.bit_mapping())?;
    Ok((slp, llrs))
}
