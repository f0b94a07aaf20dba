//! Vanilla LSTM cell and the bidirectional encoder built from it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Gate order used for every per-gate array: input, forget, output, candidate.
pub const GATES: [&str; 4] = ["i", "f", "o", "g"];
pub(crate) const FORGET: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub n_in: usize,
    pub d: usize,
    /// Input weights, `d x n_in`.
    pub w: [Tensor; 4],
    /// Recurrent weights, `d x d`.
    pub u: [Tensor; 4],
    pub b: [Tensor; 4],
}

impl LstmParams {
    pub fn zeros(n_in: usize, d: usize) -> Self {
        LstmParams {
            n_in,
            d,
            w: std::array::from_fn(|_| Tensor::zeros(&[d, n_in])),
            u: std::array::from_fn(|_| Tensor::zeros(&[d, d])),
            b: std::array::from_fn(|_| Tensor::zeros(&[d])),
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, forget bias 1.
    pub fn init(n_in: usize, d: usize, rng: &mut impl Rng) -> Self {
        let mut p = LstmParams::zeros(n_in, d);
        for g in 0..4 {
            fill_uniform(&mut p.w[g], n_in, rng);
            fill_uniform(&mut p.u[g], d, rng);
        }
        p.b[FORGET].data_mut().fill(1.0);
        p
    }

    pub fn parameter_count(&self) -> usize {
        4 * (self.d * self.n_in + self.d * self.d + self.d)
    }

    /// Blocks in registration order: per gate `w`, `u`, `b`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(12);
        for (gi, g) in GATES.iter().enumerate() {
            out.push((format!("w_{g}"), &self.w[gi]));
            out.push((format!("u_{g}"), &self.u[gi]));
            out.push((format!("b_{g}"), &self.b[gi]));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(12);
        for ((w, u), b) in self.w.iter_mut().zip(&mut self.u).zip(&mut self.b) {
            out.push(w);
            out.push(u);
            out.push(b);
        }
        out
    }

    pub fn register(&self, tape: &mut Tape) -> LstmVars {
        let vars: Vec<Var> = self
            .named_tensors()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        LstmVars {
            n_in: self.n_in,
            d: self.d,
            w: std::array::from_fn(|g| vars[3 * g]),
            u: std::array::from_fn(|g| vars[3 * g + 1]),
            b: std::array::from_fn(|g| vars[3 * g + 2]),
        }
    }
}

pub(crate) fn fill_uniform(t: &mut Tensor, fan_in: usize, rng: &mut impl Rng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..=bound);
    }
}

/// Tape handles for one LSTM direction.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub n_in: usize,
    pub d: usize,
    pub w: [Var; 4],
    pub u: [Var; 4],
    pub b: [Var; 4],
}

impl LstmVars {
    pub fn flat(&self) -> impl Iterator<Item = Var> + '_ {
        (0..4).flat_map(move |g| [self.w[g], self.u[g], self.b[g]])
    }
}

/// One LSTM step:
/// `i, f, o = sigmoid(W x + U h + b)`, `g = tanh(W x + U h + b)`,
/// `c' = f*c + i*g`, `h' = o*tanh(c')`.
pub fn lstm_step(tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var, p: &LstmVars) -> Result<(Var, Var)> {
    if tape.value(x).len() != p.n_in {
        return Err(Error::Dimension(format!(
            "lstm_step: input has length {}, expected {}",
            tape.value(x).len(),
            p.n_in
        )));
    }
    if tape.value(h_prev).len() != p.d || tape.value(c_prev).len() != p.d {
        return Err(Error::Dimension(format!("lstm_step: state size must be {}", p.d)));
    }
    let mut pre = [x; 4];
    for g in 0..4 {
        let wx = tape.affine(p.w[g], x, Some(p.b[g]))?;
        let uh = tape.affine(p.u[g], h_prev, None)?;
        pre[g] = tape.add(wx, uh)?;
    }
    let i = tape.sigmoid(pre[0]);
    let f = tape.sigmoid(pre[1]);
    let o = tape.sigmoid(pre[2]);
    let g = tape.tanh(pre[3]);
    let fc = tape.hadamard(f, c_prev)?;
    let ig = tape.hadamard(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c);
    let h = tape.hadamard(o, tc)?;
    Ok((h, c))
}

/// Runs one direction over `seq`, returning hidden states in scan order.
pub fn lstm_scan(tape: &mut Tape, seq: impl Iterator<Item = Var>, p: &LstmVars) -> Result<Vec<Var>> {
    let mut h = tape.leaf(Tensor::zeros(&[p.d]));
    let mut c = tape.leaf(Tensor::zeros(&[p.d]));
    let mut out = Vec::new();
    for x in seq {
        let (h2, c2) = lstm_step(tape, x, h, c, p)?;
        h = h2;
        c = c2;
        out.push(h);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    pub fn zeros(n_in: usize, d: usize) -> Self {
        BiLstmParams {
            forward: LstmParams::zeros(n_in, d),
            backward: LstmParams::zeros(n_in, d),
        }
    }

    pub fn init(n_in: usize, d: usize, rng: &mut impl Rng) -> Self {
        let forward = LstmParams::init(n_in, d, rng);
        let backward = LstmParams::init(n_in, d, rng);
        BiLstmParams { forward, backward }
    }

    pub fn d(&self) -> usize {
        self.forward.d
    }

    pub fn parameter_count(&self) -> usize {
        self.forward.parameter_count() + self.backward.parameter_count()
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(24);
        for (dir, p) in [("fwd", &self.forward), ("bwd", &self.backward)] {
            out.extend(p.named_tensors().into_iter().map(|(n, t)| (format!("{dir}.{n}"), t)));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.forward.tensors_mut();
        out.extend(self.backward.tensors_mut());
        out
    }

    pub fn register(&self, tape: &mut Tape) -> BiLstmVars {
        BiLstmVars {
            forward: self.forward.register(tape),
            backward: self.backward.register(tape),
        }
    }

    /// Value-level encoding of an `n_in x T` matrix into `2d x T`.
    pub fn encode(&self, seq: &Tensor) -> Result<Tensor> {
        let (n_in, t_len) = seq.dims2()?;
        if n_in != self.forward.n_in {
            return Err(Error::Dimension(format!(
                "encode: sequence has {n_in} features, encoder expects {}",
                self.forward.n_in
            )));
        }
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let cols: Vec<Var> = (0..t_len)
            .map(|t| tape.leaf(Tensor::from_parts(vec![n_in], seq.column(t))))
            .collect();
        let enc = bilstm_encode(&mut tape, &cols, &vars)?;
        let h = 2 * self.d();
        let mut out = vec![0.0; h * t_len];
        for (t, &col) in enc.columns.iter().enumerate() {
            for (r, v) in tape.value(col).data().iter().enumerate() {
                out[r * t_len + t] = *v;
            }
        }
        Ok(Tensor::from_parts(vec![h, t_len], out))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmVars {
    pub forward: LstmVars,
    pub backward: LstmVars,
}

impl BiLstmVars {
    pub fn flat(&self) -> impl Iterator<Item = Var> + '_ {
        self.forward.flat().chain(self.backward.flat())
    }
}

/// Output of a bidirectional pass, indexed by position.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `[fwd_t ; bwd_t]` per position.
    pub columns: Vec<Var>,
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
}

/// Encodes `seq` (one input column per position) with zero initial states.
pub fn bilstm_encode(tape: &mut Tape, seq: &[Var], p: &BiLstmVars) -> Result<Encoded> {
    if seq.is_empty() {
        return Err(Error::Dimension("bilstm_encode: empty sequence".into()));
    }
    if p.forward.d != p.backward.d {
        return Err(Error::Dimension("bilstm_encode: direction sizes differ".into()));
    }
    let forward = lstm_scan(tape, seq.iter().copied(), &p.forward)?;
    let mut backward = lstm_scan(tape, seq.iter().rev().copied(), &p.backward)?;
    backward.reverse();
    let columns = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| tape.concat(&[f, b]))
        .collect::<Result<Vec<_>>>()?;
    Ok(Encoded {
        columns,
        forward,
        backward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn step_values(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let x = tape.leaf(Tensor::vector(x.to_vec()).unwrap());
        let h = tape.leaf(Tensor::vector(h.to_vec()).unwrap());
        let c = tape.leaf(Tensor::vector(c.to_vec()).unwrap());
        let (h, c) = lstm_step(&mut tape, x, h, c, &vars).unwrap();
        (tape.value(h).data().to_vec(), tape.value(c).data().to_vec())
    }

    #[test]
    fn zero_params_zero_state() {
        let p = LstmParams::zeros(2, 3);
        let (h, c) = step_values(&p, &[0.4, -1.0], &[0.0; 3], &[0.0; 3]);
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn zero_params_unit_cell() {
        let p = LstmParams::zeros(1, 1);
        let (h, c) = step_values(&p, &[2.0], &[0.0], &[1.0]);
        assert_eq!(c, vec![0.5]);
        assert!((h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((h[0] - 0.23106).abs() < 1e-5);
    }

    #[test]
    fn step_rejects_bad_input() {
        let p = LstmParams::zeros(2, 3);
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let x = tape.leaf(Tensor::zeros(&[3]));
        let h = tape.leaf(Tensor::zeros(&[3]));
        assert!(matches!(lstm_step(&mut tape, x, h, h, &vars), Err(Error::Dimension(_))));
    }

    #[test]
    fn single_step_encoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = BiLstmParams::init(2, 3, &mut rng);
        let seq = Tensor::matrix(2, 1, vec![0.7, -0.2]).unwrap();
        let enc = p.encode(&seq).unwrap();
        let (hf, _) = step_values(&p.forward, &[0.7, -0.2], &[0.0; 3], &[0.0; 3]);
        let (hb, _) = step_values(&p.backward, &[0.7, -0.2], &[0.0; 3], &[0.0; 3]);
        let expected: Vec<f64> = hf.into_iter().chain(hb).collect();
        assert_eq!(enc.column(0), expected);
    }

    #[test]
    fn empty_sequence_rejected() {
        let p = BiLstmParams::zeros(1, 2);
        assert!(matches!(
            p.encode(&Tensor::zeros(&[1, 0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_params_encode_to_zero() {
        let p = BiLstmParams::zeros(2, 4);
        for t in [1, 3, 9] {
            let seq = Tensor::matrix(2, t, (0..2 * t).map(|v| v as f64).collect()).unwrap();
            assert!(p.encode(&seq).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn reversal_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = BiLstmParams::init(2, 3, &mut rng);
        let t_len = 6;
        let data: Vec<f64> = (0..2 * t_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seq = Tensor::matrix(2, t_len, data).unwrap();
        let mut rev = Tensor::zeros(&[2, t_len]);
        for r in 0..2 {
            for t in 0..t_len {
                rev.data_mut()[r * t_len + t] = seq.get2(r, t_len - 1 - t);
            }
        }
        let swapped = BiLstmParams {
            forward: p.backward.clone(),
            backward: p.forward.clone(),
        };
        let h = p.encode(&seq).unwrap();
        let hr = swapped.encode(&rev).unwrap();
        let d = 3;
        for t in 0..t_len {
            let a = h.column(t);
            let b = hr.column(t_len - 1 - t);
            assert_eq!(&a[..d], &b[d..]);
            assert_eq!(&a[d..], &b[..d]);
        }
    }

    #[test]
    fn init_respects_fan_in_and_forget_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LstmParams::init(4, 9, &mut rng);
        for g in 0..4 {
            assert!(p.w[g].data().iter().all(|v| v.abs() <= 0.5));
            assert!(p.u[g].data().iter().all(|v| v.abs() <= 1.0 / 3.0));
        }
        assert!(p.b[FORGET].data().iter().all(|&v| v == 1.0));
        assert!(p.b[0].data().iter().all(|&v| v == 0.0));
    }
}
