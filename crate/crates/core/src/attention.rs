//! Soft attention with a single learned context vector.
//!
//! Each candidate column `h_k` is scored by the linear form `context . h_k`
//! (no bias, no squashing). The scores go through a softmax and the summary
//! is the weight-averaged column.

use rand::Rng;

use crate::error::{Error, Result};
use crate::lstm::fill_uniform;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// Row vector, `1 x d_h`.
    pub context: Tensor,
}

impl AttentionParams {
    pub fn zeros(d_h: usize) -> Self {
        AttentionParams {
            context: Tensor::zeros(&[1, d_h]),
        }
    }

    pub fn init(d_h: usize, rng: &mut impl Rng) -> Self {
        let mut p = AttentionParams::zeros(d_h);
        fill_uniform(&mut p.context, d_h, rng);
        p
    }

    pub fn d_h(&self) -> usize {
        self.context.len()
    }

    pub fn register(&self, tape: &mut Tape) -> Var {
        tape.leaf(self.context.clone())
    }

    /// Value-level attention over the columns of `h` (`d_h x K`).
    pub fn attend(&self, h: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let (rows, k) = h.dims2()?;
        if rows != self.d_h() {
            return Err(Error::Dimension(format!(
                "attend: columns have height {rows}, context has {}",
                self.d_h()
            )));
        }
        let mut tape = Tape::new();
        let ctx = self.register(&mut tape);
        let cols: Vec<Var> = (0..k)
            .map(|c| tape.leaf(Tensor::from_parts(vec![rows], h.column(c))))
            .collect();
        let out = attend(&mut tape, &cols, ctx)?;
        Ok((
            tape.value(out.weights).data().to_vec(),
            tape.value(out.summary).data().to_vec(),
        ))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// Probability vector over the candidates.
    pub weights: Var,
    pub summary: Var,
}

pub fn attend(tape: &mut Tape, cols: &[Var], context: Var) -> Result<Attended> {
    if cols.is_empty() {
        return Err(Error::Dimension("attend: no candidates".into()));
    }
    let scores = tape.scores(context, cols)?;
    let weights = tape.softmax(scores)?;
    let summary = tape.weighted_sum(weights, cols)?;
    Ok(Attended { weights, summary })
}
