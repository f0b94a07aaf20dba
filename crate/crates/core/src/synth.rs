//! Synthetic datasets with a planted informative window.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{binarize_labels, Dataset, GeneSample, Label, MarkProfiles, SignalMatrix};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_genes: usize,
    pub marks: usize,
    pub bins: usize,
    pub informative_mark: usize,
    /// First informative bin.
    pub bin_start: usize,
    /// Last informative bin, inclusive.
    pub bin_end: usize,
    pub effect: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_genes: 2000,
            marks: 5,
            bins: 100,
            informative_mark: 0,
            bin_start: 45,
            bin_end: 55,
            effect: 3.0,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(format!("synth spec: {m}")));
        if self.n_genes == 0 || self.marks == 0 || self.bins == 0 {
            return fail("n_genes, marks and bins must be >= 1".into());
        }
        if self.informative_mark >= self.marks {
            return fail(format!(
                "informative_mark {} out of range 0..{}",
                self.informative_mark, self.marks
            ));
        }
        if self.bin_start > self.bin_end || self.bin_end >= self.bins {
            return fail(format!(
                "informative bins {}..={} must lie within [0, {})",
                self.bin_start, self.bin_end, self.bins
            ));
        }
        if !(self.effect.is_finite() && self.effect >= 0.0) {
            return fail(format!("effect must be finite and >= 0, got {}", self.effect));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return fail(format!("noise_scale must be finite and >= 0, got {}", self.noise_scale));
        }
        Ok(())
    }

    pub fn mark_names(&self) -> Vec<String> {
        (0..self.marks).map(|j| format!("mark{j}")).collect()
    }
}

/// A generated dataset plus its ground-truth `mark x bin` relevance indicator.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub relevance: MarkProfiles,
}

/// Draws a latent expression per gene, labels by median threshold, then
/// signals `|N(0, noise)|` everywhere plus `effect` on the planted window of
/// `+1` genes.
pub fn synth_generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let expression: Vec<f64> = (0..spec.n_genes).map(|_| rng.sample(StandardNormal)).collect();

    let width = spec.n_genes.to_string().len().max(5);
    let (m, t) = (spec.marks, spec.bins);
    let placeholder = SignalMatrix::new(Tensor::zeros(&[m, t]))?;
    let unlabeled: Vec<GeneSample> = expression
        .iter()
        .enumerate()
        .map(|(i, &e)| GeneSample {
            gene_id: format!("gene{i:0width$}"),
            x: placeholder.clone(),
            label: None,
            expression_raw: Some(e),
        })
        .collect();
    let labeled = binarize_labels(&Dataset::new(spec.mark_names(), t, unlabeled)?)?;

    let mut samples = Vec::with_capacity(spec.n_genes);
    for s in labeled.samples() {
        let planted = s.label == Some(Label::High);
        let mut data = Vec::with_capacity(m * t);
        for j in 0..m {
            for b in 0..t {
                let z: f64 = rng.sample(StandardNormal);
                let mut v = (z * spec.noise_scale).abs();
                if planted && j == spec.informative_mark && (spec.bin_start..=spec.bin_end).contains(&b) {
                    v += spec.effect;
                }
                data.push(v);
            }
        }
        samples.push(GeneSample {
            x: SignalMatrix::new(Tensor::matrix(m, t, data)?)?,
            ..s.clone()
        });
    }
    let dataset = Dataset::new(spec.mark_names(), t, samples)?;

    let rows = spec
        .mark_names()
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let row = (0..t)
                .map(|b| {
                    let on = j == spec.informative_mark && (spec.bin_start..=spec.bin_end).contains(&b);
                    if on {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            (name, row)
        })
        .collect();
    Ok(Synthetic {
        dataset,
        relevance: MarkProfiles { bins: t, rows },
    })
}
