//! Mini-batch training with validation-AUC model selection.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, SignalMatrix};
use crate::error::{Error, Result};
use crate::interpret::predict_all;
use crate::metrics::{auc, ScoredSet};
use crate::model::{loss, loss_and_grad, ModelConfig, ParameterStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    #[serde(rename = "sgd")]
    Sgd,
    #[serde(rename = "adaptive-moments", alias = "adam")]
    Adam,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    16
}
fn default_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    5
}
fn default_clip() -> f64 {
    5.0
}
fn default_optimizer() -> Optimizer {
    Optimizer::Adam
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    /// Epochs without a validation-AUC improvement before stopping; 0 stops
    /// after the first epoch.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_clip")]
    pub grad_clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            grad_clip_norm: default_clip(),
            seed: 0,
            optimizer: default_optimizer(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Contract(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Contract("batch_size must be >= 1".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Contract(format!(
                "grad_clip_norm must be > 0, got {}",
                self.grad_clip_norm
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    /// Mean validation NLL; breaks ties between epochs of equal AUC.
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

impl TrainHistory {
    /// `epoch,train_loss,val_auc` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,val_auc")?;
        for r in &self.epochs {
            writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_auc)?;
        }
        Ok(())
    }
}

/// Adam moments; unused by plain SGD.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

pub fn optimizer_step(
    params: &mut ParameterStore,
    grads: &ParameterStore,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) {
    let lr = cfg.learning_rate;
    let grads = grads.named_tensors();
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, (_, g)) in params.tensors_mut().into_iter().zip(&grads) {
                for (w, dw) in p.data_mut().iter_mut().zip(g.data()) {
                    *w -= lr * dw;
                }
            }
        }
        Optimizer::Adam => {
            if state.m.is_empty() {
                state.m = grads.iter().map(|(_, g)| vec![0.0; g.len()]).collect();
                state.v = state.m.clone();
            }
            state.step += 1;
            let t = state.step as i32;
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            for (bi, (p, (_, g))) in params.tensors_mut().into_iter().zip(&grads).enumerate() {
                let (m, v) = (&mut state.m[bi], &mut state.v[bi]);
                for (k, (w, dw)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                    m[k] = BETA1 * m[k] + (1.0 - BETA1) * dw;
                    v[k] = BETA2 * v[k] + (1.0 - BETA2) * dw * dw;
                    let m_hat = m[k] / c1;
                    let v_hat = v[k] / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + EPS);
                }
            }
        }
    }
}

/// Rescales `grads` so its global norm is at most `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut ParameterStore, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Mean loss and mean gradient over a batch. Per-sample passes may run in
/// parallel; the reduction runs in index order.
pub fn batch_gradient(
    batch: &[(&SignalMatrix, Label)],
    params: &ParameterStore,
    cfg: &ModelConfig,
) -> Result<(f64, ParameterStore, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let per_sample: Vec<_> = batch
        .par_iter()
        .map(|(x, y)| loss_and_grad(x, *y, params, cfg))
        .collect::<Result<_>>()?;
    let mut total = params.zeros_like();
    let mut losses = Vec::with_capacity(batch.len());
    for sg in &per_sample {
        total.add_assign(&sg.grads);
        losses.push(sg.loss);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    let mean = losses.iter().sum::<f64>() * inv;
    Ok((mean, total, losses))
}

/// Trains from `ParameterStore::init(mcfg, cfg.seed)` and returns the
/// parameters of the best validation epoch.
pub fn train(
    cfg: &TrainConfig,
    mcfg: &ModelConfig,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<(ParameterStore, TrainHistory)> {
    let init = ParameterStore::init(mcfg, cfg.seed)?;
    train_from(cfg, mcfg, init, train_set, val_set, |_| {})
}

/// [`train`] from given initial parameters, reporting each finished epoch.
pub fn train_from(
    cfg: &TrainConfig,
    mcfg: &ModelConfig,
    init: ParameterStore,
    train_set: &Dataset,
    val_set: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ParameterStore, TrainHistory)> {
    cfg.validate()?;
    mcfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Contract("training and validation sets must be non-empty".into()));
    }
    for ds in [train_set, val_set] {
        if ds.marks() != mcfg.marks || ds.bins() != mcfg.bins {
            return Err(Error::Dimension(format!(
                "dataset is {}x{} but the model expects {}x{}",
                ds.marks(),
                ds.bins(),
                mcfg.marks,
                mcfg.bins
            )));
        }
    }
    let labels = train_set.labels()?;
    let val_labels = val_set.labels()?;

    let mut params = init;
    let mut state = OptimizerState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_auc = f64::NEG_INFINITY;
    let mut best_loss = f64::INFINITY;
    let mut last_improvement = 0;
    let mut epochs = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&SignalMatrix, Label)> = chunk
                .iter()
                .map(|&i| (&train_set.samples()[i].x, labels[i]))
                .collect();
            let (mean, mut grads, losses) = batch_gradient(&batch, &params, mcfg)?;
            if !mean.is_finite() {
                return Err(Error::NumericalAbort {
                    epoch,
                    batch: bi + 1,
                    message: format!("loss is {mean}"),
                });
            }
            let norm = clip_global_norm(&mut grads, cfg.grad_clip_norm);
            if !norm.is_finite() {
                return Err(Error::NumericalAbort {
                    epoch,
                    batch: bi + 1,
                    message: format!("gradient norm is {norm}"),
                });
            }
            optimizer_step(&mut params, &grads, &mut state, cfg);
            loss_sum += losses.iter().sum::<f64>();
        }
        if !params.is_finite() {
            return Err(Error::NumericalAbort {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
                message: "parameters became non-finite".into(),
            });
        }
        let preds = predict_all(val_set, &params, mcfg)?;
        let val_auc = auc(&ScoredSet::new(
            preds.iter().map(|p| p.prob_high).collect(),
            val_labels.clone(),
        )?)?;
        let val_loss =
            preds.iter().zip(&val_labels).map(|(p, y)| loss(p, *y)).sum::<f64>() / preds.len() as f64;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_auc,
            val_loss,
        };
        on_epoch(&record);
        epochs.push(record);
        // Patience counts strict AUC gains only; among epochs tied at the
        // best AUC the one with the lowest validation loss is kept.
        if val_auc > best_auc {
            last_improvement = epoch;
        }
        if val_auc > best_auc || (val_auc == best_auc && val_loss < best_loss) {
            best_auc = val_auc;
            best_loss = val_loss;
            best_epoch = epoch;
            best = params.clone();
        }
        if epoch - last_improvement >= cfg.patience {
            break;
        }
    }
    Ok((
        best,
        TrainHistory {
            epochs,
            best_epoch,
            best_val_auc: best_auc,
        },
    ))
}
