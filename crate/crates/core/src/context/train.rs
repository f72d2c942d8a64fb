use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{cross_entropy, Classifier};
use super::{ContextProbs, Image, CONTEXT_COUNT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub image: Image,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of the data used for training; the rest validates.
    pub split: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-4, batch: 16, max_epochs: 100, patience: 5, split: 0.7, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch == 0 || self.max_epochs == 0 || !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::InvalidConfig(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over the epoch's mini-batches, as seen while training.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl TrainReport {
    pub fn best(&self) -> &EpochStats {
        &self.history[self.best_epoch]
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, from: usize) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in from..params.len() {
            let g = grad[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mean cross-entropy and accuracy over a subset.
pub fn evaluate(clf: &Classifier, data: &[LabeledImage], idx: &[usize]) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss = 0.0;
    let mut hits = 0usize;
    for &i in idx {
        let p = clf.forward(&data[i].image)?;
        loss += cross_entropy(&p, data[i].label);
        hits += (p.argmax() == data[i].label) as usize;
    }
    Ok((loss / idx.len() as f64, hits as f64 / idx.len() as f64))
}

fn check_dataset(data: &[LabeledImage]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if data.len() < 10 {
        return Err(Error::InsufficientData(format!("need ≥ 10 labeled images, got {}", data.len())));
    }
    let mut seen = [false; CONTEXT_COUNT];
    for d in data {
        if d.label >= CONTEXT_COUNT {
            return Err(Error::OutOfRange(format!("label {}", d.label)));
        }
        seen[d.label] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::MissingClass(c));
    }
    Ok(())
}

/// Adam on mini-batches with a seeded 70/30 split and early stopping on
/// validation loss. Returns the best-validation parameters, rounded to
/// storage precision.
pub fn train(clf: &Classifier, data: &[LabeledImage], cfg: &TrainConfig) -> Result<(Classifier, TrainReport)> {
    cfg.validate()?;
    check_dataset(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_train = ((data.len() as f64 * cfg.split).round() as usize).clamp(1, data.len() - 1);
    let train_idx = order[..n_train].to_vec();
    let val_idx = order[n_train..].to_vec();

    let mut model = clf.clone();
    let from = model.frozen_boundary();
    let mut adam = Adam::new(model.params().len());
    let mut grad = vec![0.0; model.params().len()];
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut epoch_order = train_idx.clone();

    for epoch in 0..cfg.max_epochs {
        epoch_order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for batch in epoch_order.chunks(cfg.batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let (loss, p) = model.accumulate_gradient(&data[i].image, data[i].label, &mut grad)?;
                loss_sum += loss;
                hits += (p.argmax() == data[i].label) as usize;
            }
            let scale = 1.0 / batch.len() as f64;
            grad[from..].iter_mut().for_each(|g| *g *= scale);
            if from < grad.len() {
                adam.step(model.params_mut(), &grad, cfg.lr, from);
            }
        }
        let (val_loss, val_accuracy) = evaluate(&model, data, &val_idx)?;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / n_train as f64,
            train_accuracy: hits as f64 / n_train as f64,
            val_loss,
            val_accuracy,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    best.quantize();
    Ok((best, TrainReport { history, best_epoch, stopped_early, train_indices: train_idx, val_indices: val_idx }))
}

/// Training with the first `freeze` layers held fixed.
pub fn finetune(clf: &Classifier, data: &[LabeledImage], freeze: usize, cfg: &TrainConfig) -> Result<(Classifier, TrainReport)> {
    let mut start = clf.clone();
    start.set_frozen_prefix(freeze)?;
    train(&start, data, cfg)
}

/// Most likely context (ties to the lowest label) with its probabilities.
pub fn predict_context(clf: &Classifier, img: &Image) -> Result<(usize, ContextProbs)> {
    let p = clf.forward(img)?;
    Ok((p.argmax(), p))
}
