//! Straight-line reference implementation of the forward pass, written
//! without the tape, plus finite-difference helpers.

#![allow(dead_code)]

use chromattn::attention::AttentionParams;
use chromattn::lstm::{BiLstmParams, LstmParams};
use chromattn::model::Head;
use chromattn::{ModelConfig, ParameterStore, SignalMatrix, Tensor, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (r, c) = (w.shape()[0], w.shape()[1]);
    assert_eq!(c, x.len());
    (0..r)
        .map(|i| (0..c).map(|k| w.data()[i * c + k] * x[k]).sum())
        .collect()
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// One step; returns `(h, c)`.
pub fn lstm_step(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pre: Vec<Vec<f64>> = (0..4)
        .map(|g| {
            let wx = matvec(&p.w[g], x);
            let uh = matvec(&p.u[g], h);
            (0..p.d).map(|k| wx[k] + uh[k] + p.b[g].data()[k]).collect()
        })
        .collect();
    let mut h2 = vec![0.0; p.d];
    let mut c2 = vec![0.0; p.d];
    for k in 0..p.d {
        let (i, f, o, g) = (sig(pre[0][k]), sig(pre[1][k]), sig(pre[2][k]), pre[3][k].tanh());
        c2[k] = f * c[k] + i * g;
        h2[k] = o * c2[k].tanh();
    }
    (h2, c2)
}

pub fn lstm_run(p: &LstmParams, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut h = vec![0.0; p.d];
    let mut c = vec![0.0; p.d];
    let mut out = Vec::new();
    for x in xs {
        let (h2, c2) = lstm_step(p, x, &h, &c);
        h = h2;
        c = c2;
        out.push(h.clone());
    }
    out
}

/// `(columns, forward states, backward states)`, all indexed by position.
pub fn bilstm(p: &BiLstmParams, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let fwd = lstm_run(&p.forward, xs);
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let mut bwd = lstm_run(&p.backward, &rev);
    bwd.reverse();
    let cols = fwd
        .iter()
        .zip(&bwd)
        .map(|(f, b)| f.iter().chain(b).cloned().collect())
        .collect();
    (cols, fwd, bwd)
}

pub fn attend(ctx: &[f64], cols: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = cols
        .iter()
        .map(|h| h.iter().zip(ctx).map(|(a, b)| a * b).sum())
        .collect();
    let w = softmax(&scores);
    let mut s = vec![0.0; ctx.len()];
    for (wk, h) in w.iter().zip(cols) {
        for (acc, v) in s.iter_mut().zip(h) {
            *acc += wk * v;
        }
    }
    (w, s)
}

fn ctx(a: &AttentionParams) -> &[f64] {
    a.context.data()
}

#[derive(Debug, Clone)]
pub struct OracleOut {
    pub logits: [f64; 2],
    pub probs: [f64; 2],
    /// One row per mark (per-mark variants) or one joint row.
    pub alpha: Vec<Vec<f64>>,
    /// In input mark order.
    pub beta: Option<Vec<f64>>,
}

pub fn rows(x: &SignalMatrix) -> Vec<Vec<f64>> {
    (0..x.marks()).map(|j| x.values().row(j).to_vec()).collect()
}

pub fn oracle_forward(params: &ParameterStore, cfg: &ModelConfig, x: &[Vec<f64>]) -> OracleOut {
    let m = x.len();
    let t = x[0].len();
    let mut alpha = Vec::new();
    let mut beta = None;
    let features: Vec<f64> = match cfg.variant {
        Variant::Lstm | Variant::LstmAttn => {
            let cols: Vec<Vec<f64>> = (0..t).map(|b| (0..m).map(|j| x[j][b]).collect()).collect();
            let (enc, fwd, bwd) = bilstm(&params.bin_encoders[0], &cols);
            if cfg.variant == Variant::Lstm {
                fwd[t - 1].iter().chain(&bwd[0]).cloned().collect()
            } else {
                let (w, s) = attend(ctx(&params.bin_contexts[0]), &enc);
                alpha.push(w);
                s
            }
        }
        Variant::LstmAlpha | Variant::LstmAlphaBeta => {
            let mut summaries = Vec::new();
            for j in 0..m {
                let seq: Vec<Vec<f64>> = x[j].iter().map(|&v| vec![v]).collect();
                let (enc, _, _) = bilstm(&params.bin_encoders[j], &seq);
                let c = if cfg.share_bin_context { 0 } else { j };
                let (w, s) = attend(ctx(&params.bin_contexts[c]), &enc);
                alpha.push(w);
                summaries.push(s);
            }
            if cfg.variant == Variant::LstmAlpha {
                summaries.concat()
            } else {
                let order: Vec<usize> = cfg.mark_order.clone().unwrap_or_else(|| (0..m).collect());
                let seq: Vec<Vec<f64>> = order.iter().map(|&j| summaries[j].clone()).collect();
                let (enc, _, _) = bilstm(params.mark_encoder.as_ref().unwrap(), &seq);
                let (w, s) = attend(ctx(params.mark_context.as_ref().unwrap()), &enc);
                let mut b = vec![0.0; m];
                for (k, &j) in order.iter().enumerate() {
                    b[j] = w[k];
                }
                beta = Some(b);
                s
            }
        }
    };
    let logits = match &params.head {
        Head::Linear(d) => {
            let z = matvec(&d.w, &features);
            [z[0] + d.b.data()[0], z[1] + d.b.data()[1]]
        }
        Head::Mlp { hidden, out } => {
            let pre = matvec(&hidden.w, &features);
            let a: Vec<f64> = pre.iter().zip(hidden.b.data()).map(|(p, b)| (p + b).tanh()).collect();
            let z = matvec(&out.w, &a);
            [z[0] + out.b.data()[0], z[1] + out.b.data()[1]]
        }
    };
    let p = softmax(&logits);
    OracleOut {
        logits,
        probs: [p[0], p[1]],
        alpha,
        beta,
    }
}

pub fn oracle_nll(params: &ParameterStore, cfg: &ModelConfig, x: &[Vec<f64>], class: usize) -> f64 {
    -oracle_forward(params, cfg, x).probs[class].ln()
}

/// Central difference of `f` with respect to every entry of every block.
pub fn fd_params(params: &ParameterStore, h: f64, f: impl Fn(&ParameterStore) -> f64) -> Vec<(String, Vec<f64>)> {
    let names: Vec<(String, usize)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.len()))
        .collect();
    let mut out = Vec::new();
    for (bi, (name, len)) in names.into_iter().enumerate() {
        let mut g = Vec::with_capacity(len);
        for k in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[bi].data_mut()[k] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[bi].data_mut()[k] -= h;
            g.push((f(&plus) - f(&minus)) / (2.0 * h));
        }
        out.push((name, g));
    }
    out
}

/// Passes when absolute error is tiny or relative error is below `1e-4`.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let abs = (analytic - numeric).abs();
    abs <= 1e-8 || abs / analytic.abs().max(numeric.abs()) < 1e-4
}

pub fn assert_grads(label: &str, analytic: &[f64], numeric: &[f64]) {
    assert_eq!(analytic.len(), numeric.len(), "{label}: length");
    for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert!(grad_close(*a, *n), "{label}[{k}]: analytic {a} vs numeric {n}");
    }
}

pub fn random_signal(m: usize, t: usize, rng: &mut impl Rng) -> SignalMatrix {
    let data = (0..m * t).map(|_| rng.gen_range(0.0..3.0)).collect();
    SignalMatrix::new(Tensor::matrix(m, t, data).unwrap()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small configuration used by gradient and oracle tests.
pub fn small_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        d: 4,
        d_hm: 3,
        mlp_hidden: 5,
        ..ModelConfig::new(3, 8, variant)
    }
}

/// Init, then nudge every bias off zero so bias paths are exercised.
pub fn random_params(cfg: &ModelConfig, seed: u64) -> ParameterStore {
    let mut p = ParameterStore::init(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for t in p.tensors_mut() {
        if t.shape().len() == 1 {
            for v in t.data_mut() {
                *v += r.gen_range(-0.5..0.5);
            }
        }
    }
    p
}
