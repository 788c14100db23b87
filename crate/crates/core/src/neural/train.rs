//! Joint training over several constellation datasets with the masked
//! pseudo-objective, and inference through the symbol/bit marginalization.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex32;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{FeatureFlags, MlpModel};
use super::optim::{AdamW, AdamWConfig};
use crate::bits::BitString;
use crate::channel::Dataset;
use crate::demap::{bit_llrs_from_symbols, code_logprob, log_sigmoid, sigmoid, BitLlrs, SymbolLogProbs};
use crate::error::{Error, Result};
use crate::representation::{ConstellationRepr, RepresentationLayout, SymbolCode};

const INFER_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    /// Samples drawn from each dataset per step.
    pub batch_per_dataset: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub hidden: Vec<usize>,
    pub features: FeatureFlags,
    pub seed: u64,
    /// Caps the steps of an epoch; `None` makes one pass over the largest dataset.
    pub steps_per_epoch: Option<usize>,
    /// Learning-rate reduction when validation loss stalls; off by default.
    pub lr_decay: Option<PlateauDecay>,
}

/// Multiplies the learning rate by `factor` after every `patience` epochs
/// without validation improvement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauDecay {
    pub factor: f64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamWConfig::default(),
            batch_per_dataset: 64,
            max_epochs: 100,
            patience: 10,
            hidden: vec![256, 256],
            features: FeatureFlags::default(),
            seed: 0,
            steps_per_epoch: None,
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Domain(format!("learning rate must be positive, got {}", self.optimizer.lr)));
        }
        if self.patience == 0 {
            return Err(Error::Domain("patience must be at least 1".into()));
        }
        if let Some(d) = &self.lr_decay {
            if !(d.factor > 0.0 && d.factor < 1.0) || d.patience == 0 {
                return Err(Error::Domain(format!("invalid learning-rate decay {d:?}")));
            }
        }
        if self.batch_per_dataset == 0 {
            return Err(Error::Domain("batch_per_dataset must be at least 1".into()));
        }
        Ok(())
    }

    /// Layer widths for a layout of `total_bits`.
    pub fn layer_sizes(&self, total_bits: usize) -> Vec<usize> {
        let mut s = vec![self.features.width()];
        s.extend(&self.hidden);
        s.push(total_bits);
        s
    }

    /// Short digest of the configuration, recorded in model headers.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        format!("{:08x}", crc32fast::hash(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_loss_by_constellation: Vec<(String, f64)>,
    pub val_loss_by_constellation: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl History {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch).map(|e| e.val_loss)
    }

    /// One row per epoch and constellation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,constellation,train_loss,val_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},ALL,{},{}\n", e.epoch, e.train_loss, e.val_loss));
            for ((id, t), (_, v)) in e.train_loss_by_constellation.iter().zip(&e.val_loss_by_constellation) {
                out.push_str(&format!("{},{},{},{}\n", e.epoch, csv_field(id), t, v));
            }
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Features and targets of one dataset, ready for batching.
pub struct PreparedSet<'a> {
    pub id: String,
    pub features: Array2<f32>,
    pub symbols: Vec<u16>,
    pub repr: &'a ConstellationRepr,
}

impl<'a> PreparedSet<'a> {
    pub fn new(ds: &Dataset, layout: &'a RepresentationLayout, flags: FeatureFlags) -> Result<Self> {
        let repr = layout.entry(&ds.constellation_id)?;
        if ds.num_samples() == 0 {
            return Err(Error::Domain(format!("dataset for `{}` is empty", ds.constellation_id)));
        }
        let width = flags.width();
        let mut features = Array2::zeros((ds.num_samples(), width));
        let mut symbols = Vec::with_capacity(ds.num_samples());
        for (i, (snr, sym, x)) in ds.samples().enumerate() {
            if sym >= repr.codes.len() {
                return Err(Error::UnknownSymbol { id: repr.id.clone(), symbol: sym, size: repr.codes.len() });
            }
            flags.write(x.re, x.im, snr, features.row_mut(i).as_slice_mut().unwrap());
            symbols.push(sym as u16);
        }
        Ok(PreparedSet { id: ds.constellation_id.clone(), features, symbols, repr })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Mean masked pseudo-loss over a batch and its gradient w.r.t. the logits.
pub fn batch_pseudo_loss(logits: ArrayView2<f32>, codes: &[&SymbolCode]) -> (f64, Array2<f32>) {
    let n = logits.nrows();
    let mut grad = Array2::<f32>::zeros(logits.raw_dim());
    let mut total = 0.0f64;
    let scale = 1.0 / n as f64;
    for (i, code) in codes.iter().enumerate() {
        let row = logits.row(i);
        let mut g = grad.row_mut(i);
        for (k, bit) in code.iter() {
            let z = row[k] as f64;
            total -= log_sigmoid(if bit { z } else { -z });
            g[k] = ((sigmoid(z) - if bit { 1.0 } else { 0.0 }) * scale) as f32;
        }
    }
    (total * scale, grad)
}

/// Batched inference of representation logits.
pub fn infer_logits(model: &MlpModel, features: ArrayView2<f32>) -> Result<Array2<f32>> {
    let mut out = Array2::zeros((features.nrows(), model.output_width()));
    let mut start = 0;
    while start < features.nrows() {
        let end = (start + INFER_CHUNK).min(features.nrows());
        let chunk = model.infer(features.slice(ndarray::s![start..end, ..]))?;
        out.slice_mut(ndarray::s![start..end, ..]).assign(&chunk);
        start = end;
    }
    Ok(out)
}

/// Mean pseudo-loss of a prepared set under inference mode.
pub fn evaluate_loss(model: &MlpModel, set: &PreparedSet) -> Result<f64> {
    let logits = infer_logits(model, set.features.view())?;
    let mut total = 0.0;
    for (i, &s) in set.symbols.iter().enumerate() {
        let row: Vec<f64> = logits.row(i).iter().map(|&v| v as f64).collect();
        total -= code_logprob(&row, &set.repr.codes[s as usize]);
    }
    Ok(total / set.len() as f64)
}

/// Input features for `(rx, snr_db)` samples.
pub fn features_of(flags: FeatureFlags, samples: &[(Complex32, f64)]) -> Array2<f32> {
    let mut f = Array2::zeros((samples.len(), flags.width()));
    for (i, (x, snr)) in samples.iter().enumerate() {
        flags.write(x.re, x.im, *snr, f.row_mut(i).as_slice_mut().unwrap());
    }
    f
}

fn check_model_layout(model: &MlpModel, layout: &RepresentationLayout) -> Result<()> {
    if model.output_width() != layout.total_bits() {
        return Err(Error::Shape { expected: layout.total_bits(), actual: model.output_width() });
    }
    Ok(())
}

/// Symbol log-probabilities of constellation `id` for each sample.
pub fn infer_symbol_logprobs(
    model: &MlpModel,
    samples: &[(Complex32, f64)],
    layout: &RepresentationLayout,
    id: &str,
) -> Result<Vec<SymbolLogProbs>> {
    check_model_layout(model, layout)?;
    let entry = layout.entry(id)?;
    let logits = infer_logits(model, features_of(model.features, samples).view())?;
    Ok(logits
        .rows()
        .into_iter()
        .map(|row| {
            let frame: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            SymbolLogProbs(entry.codes.iter().map(|c| code_logprob(&frame, c)).collect())
        })
        .collect())
}

/// Bit LLRs under the supplied bit mapping; the mapping need not be the one
/// used during training.
pub fn infer_bit_llrs(
    model: &MlpModel,
    samples: &[(Complex32, f64)],
    layout: &RepresentationLayout,
    id: &str,
    mapping: &[BitString],
) -> Result<Vec<BitLlrs>> {
    infer_symbol_logprobs(model, samples, layout, id)?
        .iter()
        .map(|slp| bit_llrs_from_symbols(slp, mapping))
        .collect()
}

/// Trains a fresh model on `(train, val)` dataset pairs and returns the
/// snapshot with the best total validation loss.
pub fn train(
    datasets: &[(Dataset, Dataset)],
    layout: &RepresentationLayout,
    config: &TrainConfig,
) -> Result<(MlpModel, History)> {
    config.validate()?;
    let model = MlpModel::new(&config.layer_sizes(layout.total_bits()), config.features, config.seed)?;
    train_model(model, datasets, layout, config)
}

/// Continues training `model`.
pub fn train_model(
    mut model: MlpModel,
    datasets: &[(Dataset, Dataset)],
    layout: &RepresentationLayout,
    config: &TrainConfig,
) -> Result<(MlpModel, History)> {
    config.validate()?;
    check_model_layout(&model, layout)?;
    if datasets.is_empty() {
        return Err(Error::Domain("no datasets to train on".into()));
    }
    let flags = model.features;
    let mut train_sets = Vec::with_capacity(datasets.len());
    let mut val_sets = Vec::with_capacity(datasets.len());
    for (tr, va) in datasets {
        train_sets.push(PreparedSet::new(tr, layout, flags)?);
        val_sets.push(PreparedSet::new(va, layout, flags)?);
    }

    let batch = config.batch_per_dataset;
    let largest = train_sets.iter().map(PreparedSet::len).max().unwrap();
    let steps = config.steps_per_epoch.unwrap_or_else(|| (largest / batch).max(1));
    let width = flags.width();
    let total_batch = batch * train_sets.len();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a1e);
    let mut orders: Vec<Vec<usize>> = train_sets.iter().map(|s| (0..s.len()).collect()).collect();
    let mut cursors = vec![usize::MAX; train_sets.len()];
    let mut optimizer = AdamW::new(config.optimizer, &model.param_sizes());
    let mut history = History::default();
    let mut best: Option<(f64, MlpModel)> = None;
    let mut since_best = 0;

    let mut features = Array2::<f32>::zeros((total_batch, width));
    for epoch in 1..=config.max_epochs {
        let mut loss_sum = vec![0.0f64; train_sets.len()];
        let mut epoch_loss = 0.0;
        for _ in 0..steps {
            let mut codes: Vec<&SymbolCode> = Vec::with_capacity(total_batch);
            for (d, set) in train_sets.iter().enumerate() {
                for j in 0..batch {
                    if cursors[d] >= set.len() {
                        orders[d].shuffle(&mut rng);
                        cursors[d] = 0;
                    }
                    let i = orders[d][cursors[d]];
                    cursors[d] += 1;
                    features.row_mut(d * batch + j).assign(&set.features.row(i));
                    codes.push(&set.repr.codes[set.symbols[i] as usize]);
                }
            }
            let (logits, tape) = model.forward_train(features.view())?;
            let (loss, d_logits) = batch_pseudo_loss(logits.view(), &codes);
            if !loss.is_finite() {
                let worst = (0..train_sets.len())
                    .max_by(|&a, &b| {
                        let la = batch_pseudo_loss(logits.slice(ndarray::s![a * batch..(a + 1) * batch, ..]), &codes[a * batch..(a + 1) * batch]).0;
                        let lb = batch_pseudo_loss(logits.slice(ndarray::s![b * batch..(b + 1) * batch, ..]), &codes[b * batch..(b + 1) * batch]).0;
                        la.partial_cmp(&lb).unwrap_or(std::cmp::Ordering::Greater)
                    })
                    .unwrap();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    lr: optimizer.config.lr,
                    dataset: train_sets[worst].id.clone(),
                });
            }
            for (d, ls) in loss_sum.iter_mut().enumerate() {
                let rows = d * batch..(d + 1) * batch;
                *ls += batch_pseudo_loss(logits.slice(ndarray::s![rows.clone(), ..]), &codes[rows]).0;
            }
            epoch_loss += loss * train_sets.len() as f64;
            let grads = model.backward(&tape, d_logits.view());
            optimizer.step(&mut model, &grads);
        }

        let mut val_by = Vec::with_capacity(val_sets.len());
        for set in &val_sets {
            let l = evaluate_loss(&model, set)?;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, lr: optimizer.config.lr, dataset: set.id.clone() });
            }
            val_by.push((set.id.clone(), l));
        }
        let val_loss = val_by.iter().map(|v| v.1).sum::<f64>();
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / steps as f64,
            val_loss,
            train_loss_by_constellation: train_sets
                .iter()
                .zip(&loss_sum)
                .map(|(s, l)| (s.id.clone(), l / steps as f64))
                .collect(),
            val_loss_by_constellation: val_by,
        };
        log::info!("epoch {epoch}: train {:.5} val {:.5}", record.train_loss, record.val_loss);
        history.epochs.push(record);

        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
            if let Some(d) = &config.lr_decay {
                if since_best % d.patience == 0 {
                    optimizer.config.lr *= d.factor;
                    log::info!("learning rate reduced to {:e}", optimizer.config.lr);
                }
            }
        }
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, history))
}
