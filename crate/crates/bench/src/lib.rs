//! Shared fixtures for the benchmarks.

use chromattn::synth::{synth_generate, SynthSpec};
use chromattn::{Dataset, ModelConfig, ParameterStore, Variant};

/// A planted dataset of `n` samples at the default `5 x 100` shape.
pub fn dataset(n: usize) -> Dataset {
    synth_generate(&SynthSpec {
        n_genes: n,
        ..SynthSpec::default()
    })
    .expect("valid spec")
    .dataset
}

pub fn model(variant: Variant) -> (ModelConfig, ParameterStore) {
    let cfg = ModelConfig::new(5, 100, variant);
    let params = ParameterStore::init(&cfg, 0).expect("valid config");
    (cfg, params)
}
