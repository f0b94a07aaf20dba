//! Attention-map averaging, saliency maps, and correlation of importance
//! profiles against a reference signal.

use rayon::prelude::*;

use crate::data::{Dataset, Label, SignalMatrix};
use crate::error::{Error, Result};
use crate::metrics::{pearson, ScoredSet};
use crate::model::{build_graph, forward, ModelConfig, ParameterStore, Prediction};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Predictions for every sample, in dataset order.
pub fn predict_all(dataset: &Dataset, params: &ParameterStore, cfg: &ModelConfig) -> Result<Vec<Prediction>> {
    dataset
        .samples()
        .par_iter()
        .map(|s| forward(&s.x, params, cfg))
        .collect()
}

pub fn score(dataset: &Dataset, params: &ParameterStore, cfg: &ModelConfig) -> Result<ScoredSet> {
    let preds = predict_all(dataset, params, cfg)?;
    ScoredSet::new(preds.iter().map(|p| p.prob_high).collect(), dataset.labels()?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanAttentionMap {
    pub alpha_mean: Tensor,
    pub beta_mean: Option<Vec<f64>>,
    pub class_filter: Label,
    pub n_samples: usize,
}

impl MeanAttentionMap {
    /// Sample-count weighted combination of maps over disjoint subsets.
    pub fn combine(parts: &[MeanAttentionMap]) -> Result<MeanAttentionMap> {
        let first = parts.first().ok_or_else(|| Error::Contract("combine: no maps".into()))?;
        let n: usize = parts.iter().map(|p| p.n_samples).sum();
        let mut alpha = Tensor::zeros(first.alpha_mean.shape());
        let mut beta = first.beta_mean.as_ref().map(|b| vec![0.0; b.len()]);
        for p in parts {
            let w = p.n_samples as f64 / n as f64;
            for (a, v) in alpha.data_mut().iter_mut().zip(p.alpha_mean.data()) {
                *a += w * v;
            }
            if let (Some(acc), Some(b)) = (beta.as_mut(), p.beta_mean.as_ref()) {
                for (a, v) in acc.iter_mut().zip(b) {
                    *a += w * v;
                }
            }
        }
        Ok(MeanAttentionMap {
            alpha_mean: alpha,
            beta_mean: beta,
            class_filter: first.class_filter,
            n_samples: n,
        })
    }
}

/// Mean attention profile over samples the model predicts as `class`.
pub fn mean_attention(
    params: &ParameterStore,
    cfg: &ModelConfig,
    dataset: &Dataset,
    class: Label,
) -> Result<MeanAttentionMap> {
    if !cfg.variant.has_attention() {
        return Err(Error::Contract(format!("variant {} has no attention", cfg.variant)));
    }
    let preds = predict_all(dataset, params, cfg)?;
    mean_attention_of(&preds, class)
}

/// Same as [`mean_attention`] over precomputed predictions.
pub fn mean_attention_of(preds: &[Prediction], class: Label) -> Result<MeanAttentionMap> {
    let mut alpha: Option<Tensor> = None;
    let mut beta: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for p in preds.iter().filter(|p| p.predicted() == class) {
        let att = p
            .attention
            .as_ref()
            .ok_or_else(|| Error::Contract("prediction carries no attention".into()))?;
        let acc = alpha.get_or_insert_with(|| Tensor::zeros(att.alpha.shape()));
        for (a, v) in acc.data_mut().iter_mut().zip(att.alpha.data()) {
            *a += v;
        }
        if let Some(b) = &att.beta {
            let acc = beta.get_or_insert_with(|| vec![0.0; b.len()]);
            for (a, v) in acc.iter_mut().zip(b) {
                *a += v;
            }
        }
        n += 1;
    }
    let mut alpha = alpha.ok_or(Error::EmptyClass(class.class_index()))?;
    let inv = 1.0 / n as f64;
    for a in alpha.data_mut() {
        *a *= inv;
    }
    if let Some(b) = beta.as_mut() {
        for v in b.iter_mut() {
            *v *= inv;
        }
    }
    Ok(MeanAttentionMap {
        alpha_mean: alpha,
        beta_mean: beta,
        class_filter: class,
        n_samples: n,
    })
}

/// `|d logit_k / d x|` per input cell, `k` the predicted class.
pub fn saliency(params: &ParameterStore, cfg: &ModelConfig, x: &SignalMatrix) -> Result<Tensor> {
    let mut tape = Tape::new();
    let graph = build_graph(&mut tape, x, params, cfg)?;
    let k = graph.prediction(&tape).predicted().class_index();
    let target = tape.pick(graph.logits, k)?;
    let grads = tape.backward(target)?;
    let g = graph.input_gradient(&grads, x.marks(), x.bins());
    Ok(g.map(f64::abs))
}

/// Mean saliency over samples predicted as `class`.
pub fn mean_saliency(
    params: &ParameterStore,
    cfg: &ModelConfig,
    dataset: &Dataset,
    class: Label,
) -> Result<(Tensor, usize)> {
    let per_sample: Vec<Option<Tensor>> = dataset
        .samples()
        .par_iter()
        .map(|s| {
            let pred = forward(&s.x, params, cfg)?;
            if pred.predicted() == class {
                saliency(params, cfg, &s.x).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let mut acc = Tensor::zeros(&[dataset.marks(), dataset.bins()]);
    let mut n = 0;
    for t in per_sample.into_iter().flatten() {
        for (a, v) in acc.data_mut().iter_mut().zip(t.data()) {
            *a += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyClass(class.class_index()));
    }
    let inv = 1.0 / n as f64;
    Ok((acc.map(|v| v * inv), n))
}

/// Pearson correlation of an importance profile with a reference profile.
pub fn interpretation_correlation(weights: &[f64], reference: &[f64]) -> Result<f64> {
    if weights.len() != reference.len() {
        return Err(Error::Contract(format!(
            "profile lengths {} and {} differ",
            weights.len(),
            reference.len()
        )));
    }
    pearson(weights, reference)
}
