//! The four LSTM-family classifiers and their parameter store.
//!
//! `LstmAlphaBeta` is the full hierarchy: one bidirectional encoder per mark,
//! bin-level attention per mark, a mark-level bidirectional encoder over the
//! per-mark summaries, mark-level attention, then a linear 2-way classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attend, AttentionParams};
use crate::data::{Label, SignalMatrix};
use crate::error::{Error, Result};
use crate::lstm::{bilstm_encode, fill_uniform, BiLstmParams, BiLstmVars};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Joint BiLSTM over all marks, final states to the classifier.
    Lstm,
    /// Joint BiLSTM plus one attention layer over bins.
    LstmAttn,
    /// Per-mark BiLSTM and bin attention, concatenated into an MLP.
    LstmAlpha,
    /// Per-mark BiLSTM, bin attention, mark-level BiLSTM, mark attention.
    LstmAlphaBeta,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Lstm,
        Variant::LstmAttn,
        Variant::LstmAlpha,
        Variant::LstmAlphaBeta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lstm => "lstm",
            Variant::LstmAttn => "lstm-attn",
            Variant::LstmAlpha => "lstm-alpha",
            Variant::LstmAlphaBeta => "lstm-alpha-beta",
        }
    }

    pub fn per_mark(self) -> bool {
        matches!(self, Variant::LstmAlpha | Variant::LstmAlphaBeta)
    }

    pub fn has_attention(self) -> bool {
        self != Variant::Lstm
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_d() -> usize {
    32
}
fn default_d_hm() -> usize {
    16
}
fn default_true() -> bool {
    true
}
fn default_mlp_hidden() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub marks: usize,
    pub bins: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_d_hm")]
    pub d_hm: usize,
    pub variant: Variant,
    /// One bin-level context shared by all marks (otherwise one per mark).
    #[serde(default = "default_true")]
    pub share_bin_context: bool,
    /// Order in which marks are fed to the mark-level encoder; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mark_order: Option<Vec<usize>>,
    /// Hidden width of the `lstm-alpha` head.
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden: usize,
}

impl ModelConfig {
    pub fn new(marks: usize, bins: usize, variant: Variant) -> Self {
        ModelConfig {
            marks,
            bins,
            d: default_d(),
            d_hm: default_d_hm(),
            variant,
            share_bin_context: true,
            mark_order: None,
            mlp_hidden: default_mlp_hidden(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("marks", self.marks),
            ("bins", self.bins),
            ("d", self.d),
            ("d_hm", self.d_hm),
            ("mlp_hidden", self.mlp_hidden),
        ] {
            if v == 0 {
                return Err(Error::Contract(format!("model config: {name} must be >= 1")));
            }
        }
        if let Some(order) = &self.mark_order {
            let mut seen = vec![false; self.marks];
            let ok = order.len() == self.marks
                && order.iter().all(|&j| j < self.marks && !std::mem::replace(&mut seen[j], true));
            if !ok {
                return Err(Error::Contract(format!(
                    "model config: mark_order {order:?} is not a permutation of 0..{}",
                    self.marks
                )));
            }
        }
        Ok(())
    }

    pub fn mark_sequence(&self) -> Vec<usize> {
        self.mark_order
            .clone()
            .unwrap_or_else(|| (0..self.marks).collect())
    }
}

/// Weight matrix plus bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Dense {
            w: Tensor::zeros(&[out, inp]),
            b: Tensor::zeros(&[out]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    /// `W_c v + b_c`.
    Linear(Dense),
    /// `W2 tanh(W1 v + b1) + b2`.
    Mlp { hidden: Dense, out: Dense },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    /// One per mark for per-mark variants, a single joint encoder otherwise.
    pub bin_encoders: Vec<BiLstmParams>,
    pub mark_encoder: Option<BiLstmParams>,
    /// Empty for `lstm`; one shared or one per mark otherwise.
    pub bin_contexts: Vec<AttentionParams>,
    pub mark_context: Option<AttentionParams>,
    pub head: Head,
}

impl ParameterStore {
    /// All-zero store with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (m, d, dh) = (cfg.marks, cfg.d, cfg.d_hm);
        let store = match cfg.variant {
            Variant::Lstm => ParameterStore {
                bin_encoders: vec![BiLstmParams::zeros(m, d)],
                mark_encoder: None,
                bin_contexts: vec![],
                mark_context: None,
                head: Head::Linear(Dense::zeros(2, 2 * d)),
            },
            Variant::LstmAttn => ParameterStore {
                bin_encoders: vec![BiLstmParams::zeros(m, d)],
                mark_encoder: None,
                bin_contexts: vec![AttentionParams::zeros(2 * d)],
                mark_context: None,
                head: Head::Linear(Dense::zeros(2, 2 * d)),
            },
            Variant::LstmAlpha | Variant::LstmAlphaBeta => {
                let contexts = if cfg.share_bin_context { 1 } else { m };
                let bin_encoders = vec![BiLstmParams::zeros(1, d); m];
                let bin_contexts = vec![AttentionParams::zeros(2 * d); contexts];
                if cfg.variant == Variant::LstmAlpha {
                    ParameterStore {
                        bin_encoders,
                        mark_encoder: None,
                        bin_contexts,
                        mark_context: None,
                        head: Head::Mlp {
                            hidden: Dense::zeros(cfg.mlp_hidden, m * 2 * d),
                            out: Dense::zeros(2, cfg.mlp_hidden),
                        },
                    }
                } else {
                    ParameterStore {
                        bin_encoders,
                        mark_encoder: Some(BiLstmParams::zeros(2 * d, dh)),
                        bin_contexts,
                        mark_context: Some(AttentionParams::zeros(2 * dh)),
                        head: Head::Linear(Dense::zeros(2, 2 * dh)),
                    }
                }
            }
        };
        Ok(store)
    }

    /// Every matrix uniform in `+-1/sqrt(fan_in)` (fan_in = columns), biases zero,
    /// forget-gate biases one. Deterministic in `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParameterStore::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, t) in store.named_tensors_mut() {
            if t.shape().len() == 2 {
                let fan_in = t.shape()[1];
                fill_uniform(t, fan_in, &mut rng);
            } else if name.ends_with(".b_f") {
                t.data_mut().fill(1.0);
            }
        }
        Ok(store)
    }

    /// Stable block names paired with tensors, in registration order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (j, enc) in self.bin_encoders.iter().enumerate() {
            out.extend(enc.named_tensors().into_iter().map(|(n, t)| (format!("bin_encoder.{j}.{n}"), t)));
        }
        if let Some(enc) = &self.mark_encoder {
            out.extend(enc.named_tensors().into_iter().map(|(n, t)| (format!("mark_encoder.{n}"), t)));
        }
        for (j, c) in self.bin_contexts.iter().enumerate() {
            out.push((format!("bin_context.{j}"), &c.context));
        }
        if let Some(c) = &self.mark_context {
            out.push(("mark_context".to_string(), &c.context));
        }
        match &self.head {
            Head::Linear(l) => {
                out.push(("classifier.w".to_string(), &l.w));
                out.push(("classifier.b".to_string(), &l.b));
            }
            Head::Mlp { hidden, out: o } => {
                out.push(("mlp.hidden.w".to_string(), &hidden.w));
                out.push(("mlp.hidden.b".to_string(), &hidden.b));
                out.push(("mlp.out.w".to_string(), &o.w));
                out.push(("mlp.out.b".to_string(), &o.b));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for enc in &mut self.bin_encoders {
            out.extend(enc.tensors_mut());
        }
        if let Some(enc) = &mut self.mark_encoder {
            out.extend(enc.tensors_mut());
        }
        for c in &mut self.bin_contexts {
            out.push(&mut c.context);
        }
        if let Some(c) = &mut self.mark_context {
            out.push(&mut c.context);
        }
        match &mut self.head {
            Head::Linear(l) => {
                out.push(&mut l.w);
                out.push(&mut l.b);
            }
            Head::Mlp { hidden, out: o } => {
                out.push(&mut hidden.w);
                out.push(&mut hidden.b);
                out.push(&mut o.w);
                out.push(&mut o.b);
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let names: Vec<String> = self.named_tensors().into_iter().map(|(n, _)| n).collect();
        names.into_iter().zip(self.tensors_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Same shapes, all zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    /// Euclidean norm over every entry of every block.
    pub fn global_norm(&self) -> f64 {
        self.named_tensors()
            .iter()
            .map(|(_, t)| t.norm_sq())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    /// `self += other`, blocks assumed conforming.
    pub fn add_assign(&mut self, other: &ParameterStore) {
        for (a, (_, b)) in self.tensors_mut().into_iter().zip(other.named_tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn register(&self, tape: &mut Tape) -> StoreVars {
        let bin_encoders = self.bin_encoders.iter().map(|e| e.register(tape)).collect();
        let mark_encoder = self.mark_encoder.as_ref().map(|e| e.register(tape));
        let bin_contexts = self.bin_contexts.iter().map(|c| c.register(tape)).collect();
        let mark_context = self.mark_context.as_ref().map(|c| c.register(tape));
        let head = match &self.head {
            Head::Linear(l) => HeadVars::Linear {
                w: tape.leaf(l.w.clone()),
                b: tape.leaf(l.b.clone()),
            },
            Head::Mlp { hidden, out } => HeadVars::Mlp {
                w1: tape.leaf(hidden.w.clone()),
                b1: tape.leaf(hidden.b.clone()),
                w2: tape.leaf(out.w.clone()),
                b2: tape.leaf(out.b.clone()),
            },
        };
        StoreVars {
            bin_encoders,
            mark_encoder,
            bin_contexts,
            mark_context,
            head,
        }
    }

    /// Gradient store aligned with `self`, read from a finished reverse pass.
    pub fn gradients(&self, vars: &StoreVars, grads: &Gradients<'_>) -> ParameterStore {
        let mut out = self.clone();
        for (t, v) in out.tensors_mut().into_iter().zip(vars.flat()) {
            *t = grads.wrt(v);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub enum HeadVars {
    Linear { w: Var, b: Var },
    Mlp { w1: Var, b1: Var, w2: Var, b2: Var },
}

/// Tape handles mirroring a [`ParameterStore`].
#[derive(Clone, Debug)]
pub struct StoreVars {
    pub bin_encoders: Vec<BiLstmVars>,
    pub mark_encoder: Option<BiLstmVars>,
    pub bin_contexts: Vec<Var>,
    pub mark_context: Option<Var>,
    pub head: HeadVars,
}

impl StoreVars {
    /// Same order as [`ParameterStore::named_tensors`].
    pub fn flat(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.bin_encoders.iter().flat_map(|e| e.flat().collect::<Vec<_>>()).collect();
        if let Some(e) = &self.mark_encoder {
            out.extend(e.flat());
        }
        out.extend(&self.bin_contexts);
        out.extend(self.mark_context);
        match &self.head {
            HeadVars::Linear { w, b } => out.extend([*w, *b]),
            HeadVars::Mlp { w1, b1, w2, b2 } => out.extend([*w1, *b1, *w2, *b2]),
        }
        out
    }
}

/// Per-sample attention: `alpha` rows are probability vectors over bins,
/// `beta` a probability vector over marks indexed in input order.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionProfile {
    pub alpha: Tensor,
    pub beta: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub prob_high: f64,
    pub prob_low: f64,
    /// Pre-softmax scores, `[low, high]`.
    pub logits: [f64; 2],
    pub attention: Option<AttentionProfile>,
}

impl Prediction {
    pub fn predicted(&self) -> Label {
        if self.prob_high > self.prob_low {
            Label::High
        } else {
            Label::Low
        }
    }
}

/// Input cells as tape leaves.
#[derive(Clone, Debug)]
pub enum InputVars {
    /// `[mark][bin]`, each a length-1 leaf.
    PerMark(Vec<Vec<Var>>),
    /// One length-M leaf per bin.
    Joint(Vec<Var>),
}

/// A forward pass recorded on a tape.
#[derive(Clone, Debug)]
pub struct Graph {
    pub params: StoreVars,
    pub inputs: InputVars,
    pub logits: Var,
    pub probs: Var,
    /// Bin-attention weights: one per mark, or a single joint row.
    pub alpha: Vec<Var>,
    /// Mark-attention weights in encoder sequence order.
    pub beta: Option<Var>,
    pub mark_sequence: Vec<usize>,
}

impl Graph {
    /// Reads the prediction and attention maps off the tape.
    pub fn prediction(&self, tape: &Tape) -> Prediction {
        let p = tape.value(self.probs).data();
        let l = tape.value(self.logits).data();
        let attention = if self.alpha.is_empty() {
            None
        } else {
            let rows = self.alpha.len();
            let cols = tape.value(self.alpha[0]).len();
            let mut a = Vec::with_capacity(rows * cols);
            for &v in &self.alpha {
                a.extend_from_slice(tape.value(v).data());
            }
            let beta = self.beta.map(|b| {
                let seq = tape.value(b).data();
                let mut out = vec![0.0; seq.len()];
                for (pos, &mark) in self.mark_sequence.iter().enumerate() {
                    out[mark] = seq[pos];
                }
                out
            });
            Some(AttentionProfile {
                alpha: Tensor::from_parts(vec![rows, cols], a),
                beta,
            })
        };
        Prediction {
            prob_low: p[0],
            prob_high: p[1],
            logits: [l[0], l[1]],
            attention,
        }
    }

    /// `M x T` gradient with respect to the input cells.
    pub fn input_gradient(&self, grads: &Gradients<'_>, marks: usize, bins: usize) -> Tensor {
        let mut out = Tensor::zeros(&[marks, bins]);
        match &self.inputs {
            InputVars::PerMark(rows) => {
                for (j, row) in rows.iter().enumerate() {
                    for (t, &v) in row.iter().enumerate() {
                        out.data_mut()[j * bins + t] = grads.wrt(v).data()[0];
                    }
                }
            }
            InputVars::Joint(cols) => {
                for (t, &v) in cols.iter().enumerate() {
                    for (j, g) in grads.wrt(v).data().iter().enumerate() {
                        out.data_mut()[j * bins + t] = *g;
                    }
                }
            }
        }
        out
    }
}

/// Records the full forward pass of `cfg.variant` on `tape`.
pub fn build_graph(
    tape: &mut Tape,
    x: &SignalMatrix,
    params: &ParameterStore,
    cfg: &ModelConfig,
) -> Result<Graph> {
    let values = x.values();
    let (m, t_len) = values.dims2()?;
    if m != cfg.marks || t_len != cfg.bins {
        return Err(Error::Dimension(format!(
            "input is {m}x{t_len} but the model expects {}x{}",
            cfg.marks, cfg.bins
        )));
    }
    let pv = params.register(tape);
    let mark_sequence = cfg.mark_sequence();

    let (inputs, alpha, beta, features) = if cfg.variant.per_mark() {
        let mut rows = Vec::with_capacity(m);
        let mut alpha = Vec::with_capacity(m);
        let mut summaries = Vec::with_capacity(m);
        for j in 0..m {
            let leaves: Vec<Var> = values
                .row(j)
                .iter()
                .map(|&v| tape.leaf(Tensor::from_parts(vec![1], vec![v])))
                .collect();
            let enc = bilstm_encode(tape, &leaves, &pv.bin_encoders[j])?;
            let ctx = pv.bin_contexts[if cfg.share_bin_context { 0 } else { j }];
            let att = attend(tape, &enc.columns, ctx)?;
            rows.push(leaves);
            alpha.push(att.weights);
            summaries.push(att.summary);
        }
        if cfg.variant == Variant::LstmAlphaBeta {
            let seq: Vec<Var> = mark_sequence.iter().map(|&j| summaries[j]).collect();
            let enc = bilstm_encode(tape, &seq, pv.mark_encoder.as_ref().expect("mark encoder"))?;
            let att = attend(tape, &enc.columns, pv.mark_context.expect("mark context"))?;
            (InputVars::PerMark(rows), alpha, Some(att.weights), att.summary)
        } else {
            let cat = tape.concat(&summaries)?;
            (InputVars::PerMark(rows), alpha, None, cat)
        }
    } else {
        let cols: Vec<Var> = (0..t_len)
            .map(|t| tape.leaf(Tensor::from_parts(vec![m], values.column(t))))
            .collect();
        let enc = bilstm_encode(tape, &cols, &pv.bin_encoders[0])?;
        if cfg.variant == Variant::LstmAttn {
            let att = attend(tape, &enc.columns, pv.bin_contexts[0])?;
            (InputVars::Joint(cols), vec![att.weights], None, att.summary)
        } else {
            let last = tape.concat(&[enc.forward[t_len - 1], enc.backward[0]])?;
            (InputVars::Joint(cols), vec![], None, last)
        }
    };

    let logits = match &pv.head {
        HeadVars::Linear { w, b } => tape.affine(*w, features, Some(*b))?,
        HeadVars::Mlp { w1, b1, w2, b2 } => {
            let pre = tape.affine(*w1, features, Some(*b1))?;
            let hidden = tape.tanh(pre);
            tape.affine(*w2, hidden, Some(*b2))?
        }
    };
    let probs = tape.softmax(logits)?;
    Ok(Graph {
        params: pv,
        inputs,
        logits,
        probs,
        alpha,
        beta,
        mark_sequence,
    })
}

pub fn forward(x: &SignalMatrix, params: &ParameterStore, cfg: &ModelConfig) -> Result<Prediction> {
    let mut tape = Tape::new();
    let graph = build_graph(&mut tape, x, params, cfg)?;
    Ok(graph.prediction(&tape))
}

/// Negative log-likelihood of the true class.
pub fn loss(pred: &Prediction, label: Label) -> f64 {
    let p = match label {
        Label::High => pred.prob_high,
        Label::Low => pred.prob_low,
    };
    -p.ln()
}

#[derive(Clone, Debug)]
pub struct SampleGradient {
    pub loss: f64,
    pub grads: ParameterStore,
    pub prediction: Prediction,
}

/// Forward, NLL, and reverse pass for one labeled sample.
pub fn loss_and_grad(
    x: &SignalMatrix,
    label: Label,
    params: &ParameterStore,
    cfg: &ModelConfig,
) -> Result<SampleGradient> {
    let mut tape = Tape::new();
    let graph = build_graph(&mut tape, x, params, cfg)?;
    let p_true = tape.pick(graph.probs, label.class_index())?;
    let nll = tape.neg_log(p_true);
    let loss = tape.value(nll).data()[0];
    let grads = tape.backward(nll)?;
    Ok(SampleGradient {
        loss,
        grads: params.gradients(&graph.params, &grads),
        prediction: graph.prediction(&tape),
    })
}
