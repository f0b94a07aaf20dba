//! Hierarchical attention classifier for binned multi-track signals.
//!
//! Each sample is an `M x T` matrix (M signal tracks, T spatial bins) with a
//! binary label. The full model encodes every track with its own
//! bidirectional LSTM, pools the bins of each track with soft attention,
//! encodes the pooled track summaries with a second bidirectional LSTM, pools
//! again over tracks, and classifies the result. Both attention layers are
//! read back as per-sample importance maps.
//!
//! Everything runs on a small reverse-mode differentiation tape ([`tape`]) in
//! double precision.

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod interpret;
pub mod io;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use data::{Dataset, GeneSample, Label, SignalMatrix};
pub use error::{Error, Result};
pub use model::{AttentionProfile, ModelConfig, ParameterStore, Prediction, Variant};
pub use synth::{synth_generate, SynthSpec};
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainHistory};
