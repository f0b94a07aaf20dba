//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its value and parent references.
//! Nodes are appended in evaluation order, so index order is a topological
//! order and the reverse pass is a single descending sweep.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Hadamard,
    Add,
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    /// `W x (+ b)`.
    Affine { w: Var, x: Var, b: Option<Var> },
    Add(Var, Var),
    Hadamard(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    /// `s_k = context . col_k`.
    Scores { context: Var, cols: Vec<Var> },
    /// `sum_k weights_k col_k`.
    WeightedSum { weights: Var, cols: Vec<Var> },
    Pick(Var, usize),
    NegLog(Var),
    Sum(Var),
}

impl Op {
    pub fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Affine { w, x, b } => {
                let mut p = vec![*w, *x];
                p.extend(b.iter().copied());
                p
            }
            Op::Add(a, b) | Op::Hadamard(a, b) => vec![*a, *b],
            Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::Pick(a, _)
            | Op::NegLog(a)
            | Op::Sum(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
            Op::Scores { context, cols } => {
                let mut p = vec![*context];
                p.extend(cols.iter().copied());
                p
            }
            Op::WeightedSum { weights, cols } => {
                let mut p = vec![*weights];
                p.extend(cols.iter().copied());
                p
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TapeNode {
    pub value: Tensor,
    pub op: Op,
}

#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &TapeNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(TapeNode { value, op });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `y = W x + b`, with `b` optional.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Result<Var> {
        let (p, q) = self.value(w).dims2()?;
        let xv = self.data(x);
        if xv.len() != q {
            return Err(Error::Dimension(format!(
                "affine: W is {p}x{q} but x has length {}",
                xv.len()
            )));
        }
        let mut y = match b {
            Some(b) => {
                let bv = self.data(b);
                if bv.len() != p {
                    return Err(Error::Dimension(format!(
                        "affine: W is {p}x{q} but b has length {}",
                        bv.len()
                    )));
                }
                bv.to_vec()
            }
            None => vec![0.0; p],
        };
        let wv = self.data(w);
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &wv[i * q..(i + 1) * q];
            *yi += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(self.push(Tensor::from_parts(vec![p], y), Op::Affine { w, x, b }))
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(Error::Dimension(format!(
                "{what}: operand lengths {la} and {lb} differ"
            )));
        }
        Ok(())
    }

    pub fn elementwise(&mut self, kind: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = match kind {
            Elementwise::Sigmoid | Elementwise::Tanh => 1,
            Elementwise::Hadamard | Elementwise::Add => 2,
        };
        if args.len() != arity {
            return Err(Error::Contract(format!(
                "{kind:?} takes {arity} operand(s), got {}",
                args.len()
            )));
        }
        match kind {
            Elementwise::Sigmoid => Ok(self.sigmoid(args[0])),
            Elementwise::Tanh => Ok(self.tanh(args[0])),
            Elementwise::Hadamard => self.hadamard(args[0], args[1]),
            Elementwise::Add => self.add(args[0], args[1]),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "add")?;
        let value = Tensor::from_parts(
            self.value(a).shape().to_vec(),
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect(),
        );
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "hadamard")?;
        let value = Tensor::from_parts(
            self.value(a).shape().to_vec(),
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect(),
        );
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn softmax(&mut self, z: Var) -> Result<Var> {
        let zv = self.data(z);
        if zv.is_empty() {
            return Err(Error::Dimension("softmax of an empty vector".into()));
        }
        let value = Tensor::from_parts(vec![zv.len()], softmax(zv));
        Ok(self.push(value, Op::Softmax(z)))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of zero parts".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        let n = out.len();
        Ok(self.push(Tensor::from_parts(vec![n], out), Op::Concat(parts.to_vec())))
    }

    /// One linear score per column: `context . col_k`.
    pub fn scores(&mut self, context: Var, cols: &[Var]) -> Result<Var> {
        if cols.is_empty() {
            return Err(Error::Dimension("scores over zero columns".into()));
        }
        let cv = self.data(context);
        let mut out = Vec::with_capacity(cols.len());
        for &c in cols {
            let col = self.data(c);
            if col.len() != cv.len() {
                return Err(Error::Dimension(format!(
                    "scores: context has length {} but a column has length {}",
                    cv.len(),
                    col.len()
                )));
            }
            out.push(cv.iter().zip(col).map(|(a, b)| a * b).sum());
        }
        let value = Tensor::from_parts(vec![cols.len()], out);
        Ok(self.push(
            value,
            Op::Scores {
                context,
                cols: cols.to_vec(),
            },
        ))
    }

    /// `sum_k weights_k col_k`.
    pub fn weighted_sum(&mut self, weights: Var, cols: &[Var]) -> Result<Var> {
        let wv = self.data(weights);
        if cols.is_empty() || wv.len() != cols.len() {
            return Err(Error::Dimension(format!(
                "weighted_sum: {} weights for {} columns",
                wv.len(),
                cols.len()
            )));
        }
        let h = self.value(cols[0]).len();
        let mut out = vec![0.0; h];
        for (&w, &c) in wv.iter().zip(cols) {
            let col = self.data(c);
            if col.len() != h {
                return Err(Error::Dimension("weighted_sum: ragged columns".into()));
            }
            for (o, x) in out.iter_mut().zip(col) {
                *o += w * x;
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![h], out),
            Op::WeightedSum {
                weights,
                cols: cols.to_vec(),
            },
        ))
    }

    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let av = self.data(a);
        let v = *av.get(index).ok_or_else(|| {
            Error::Dimension(format!("pick: index {index} out of {}", av.len()))
        })?;
        Ok(self.push(Tensor::from_parts(vec![1], vec![v]), Op::Pick(a, index)))
    }

    /// `-ln(a)` elementwise.
    pub fn neg_log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| -v.ln());
        self.push(value, Op::NegLog(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::from_parts(vec![1], vec![s]), Op::Sum(a))
    }

    /// Propagates adjoints from a scalar `root` seeded with 1.
    pub fn backward(&self, root: Var) -> Result<Gradients<'_>> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let y = node.value.data();
            match &node.op {
                Op::Leaf => {}
                Op::Affine { w, x, b } => {
                    let (p, q) = (y.len(), self.value(*x).len());
                    let wv = self.data(*w);
                    let xv = self.data(*x);
                    {
                        let gx = slot(&mut adj, *x, q);
                        for (i_row, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            let row = &wv[i_row * q..(i_row + 1) * q];
                            for (gxk, wk) in gx.iter_mut().zip(row) {
                                *gxk += gi * wk;
                            }
                        }
                    }
                    {
                        let gw = slot(&mut adj, *w, p * q);
                        for (i_row, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            let row = &mut gw[i_row * q..(i_row + 1) * q];
                            for (gwk, xk) in row.iter_mut().zip(xv) {
                                *gwk += gi * xk;
                            }
                        }
                    }
                    if let Some(b) = b {
                        add_into(slot(&mut adj, *b, p), &g);
                    }
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut adj, *a, g.len()), &g);
                    add_into(slot(&mut adj, *b, g.len()), &g);
                }
                Op::Hadamard(a, b) => {
                    let (av, bv) = (self.data(*a), self.data(*b));
                    let ga = slot(&mut adj, *a, g.len());
                    for ((o, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                        *o += gi * bi;
                    }
                    let gb = slot(&mut adj, *b, g.len());
                    for ((o, gi), ai) in gb.iter_mut().zip(&g).zip(av) {
                        *o += gi * ai;
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = slot(&mut adj, *a, g.len());
                    for ((o, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *o += gi * yi * (1.0 - yi);
                    }
                }
                Op::Tanh(a) => {
                    let ga = slot(&mut adj, *a, g.len());
                    for ((o, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }
                Op::Softmax(z) => {
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let gz = slot(&mut adj, *z, g.len());
                    for ((o, gi), yi) in gz.iter_mut().zip(&g).zip(y) {
                        *o += yi * (gi - dot);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        add_into(slot(&mut adj, p, n), &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Scores { context, cols } => {
                    let cv = self.data(*context);
                    let h = cv.len();
                    for (&c, gk) in cols.iter().zip(&g) {
                        let col = self.data(c);
                        let gc = slot(&mut adj, *context, h);
                        for (o, x) in gc.iter_mut().zip(col) {
                            *o += gk * x;
                        }
                        let gcol = slot(&mut adj, c, h);
                        for (o, x) in gcol.iter_mut().zip(cv) {
                            *o += gk * x;
                        }
                    }
                }
                Op::WeightedSum { weights, cols } => {
                    let wv = self.data(*weights);
                    let k = cols.len();
                    let h = g.len();
                    for (idx, &c) in cols.iter().enumerate() {
                        let col = self.data(c);
                        let dw: f64 = g.iter().zip(col).map(|(a, b)| a * b).sum();
                        slot(&mut adj, *weights, k)[idx] += dw;
                        let gcol = slot(&mut adj, c, h);
                        for (o, gi) in gcol.iter_mut().zip(&g) {
                            *o += wv[idx] * gi;
                        }
                    }
                }
                Op::Pick(a, index) => {
                    let n = self.value(*a).len();
                    slot(&mut adj, *a, n)[*index] += g[0];
                }
                Op::NegLog(a) => {
                    let av = self.data(*a);
                    let ga = slot(&mut adj, *a, g.len());
                    for ((o, gi), ai) in ga.iter_mut().zip(&g).zip(av) {
                        *o -= gi / ai;
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    for o in slot(&mut adj, *a, n).iter_mut() {
                        *o += g[0];
                    }
                }
            }
            adj[i] = Some(g);
        }
        Ok(Gradients { tape: self, adj })
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Adjoints of every node reachable from the root.
pub struct Gradients<'t> {
    tape: &'t Tape,
    adj: Vec<Option<Vec<f64>>>,
}

impl Gradients<'_> {
    /// `d root / d v`, zero when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.tape.value(v).shape().to_vec();
        match self.adj.get(v.0).and_then(|a| a.as_ref()) {
            Some(a) => Tensor::from_parts(shape, a.clone()),
            None => Tensor::zeros(&shape),
        }
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

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
