//! Run configuration: one TOML file plus `key=value` overrides.

use std::path::{Path, PathBuf};

use chromattn::train::TrainConfig;
use chromattn::{ModelConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn third() -> [f64; 3] {
    [1.0 / 3.0; 3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: PathBuf,
    pub bins: usize,
    #[serde(default = "third")]
    pub fractions: [f64; 3],
    #[serde(default)]
    pub split_seed: u64,
    /// Keep only these mark indices, in this order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marks: Option<Vec<usize>>,
    /// Apply `asinh` to every signal value after loading.
    #[serde(default)]
    pub arcsinh: bool,
}

fn default_variant() -> Variant {
    Variant::LstmAlphaBeta
}

/// [`ModelConfig`] without the shape, which comes from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "d")]
    pub d: usize,
    #[serde(default = "d_hm")]
    pub d_hm: usize,
    #[serde(default = "yes")]
    pub share_bin_context: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mark_order: Option<Vec<usize>>,
    #[serde(default = "mlp_hidden")]
    pub mlp_hidden: usize,
}

fn d() -> usize {
    32
}
fn d_hm() -> usize {
    16
}
fn yes() -> bool {
    true
}
fn mlp_hidden() -> usize {
    32
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variant: default_variant(),
            d: d(),
            d_hm: d_hm(),
            share_bin_context: true,
            mark_order: None,
            mlp_hidden: mlp_hidden(),
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, marks: usize, bins: usize) -> ModelConfig {
        ModelConfig {
            marks,
            bins,
            d: self.d,
            d_hm: self.d_hm,
            variant: self.variant,
            share_bin_context: self.share_bin_context,
            mark_order: self.mark_order.clone(),
            mlp_hidden: self.mlp_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    /// Parses `text`, applies `overrides` (`section.key=value`), and validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
        let mut root: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::config(format!("config: {e}")))?;
        for item in overrides {
            apply_override(&mut root, item)?;
        }
        let cfg: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(format!("config: {}", e.message())))?;
        cfg.train.validate().map_err(CliError::from)?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

fn apply_override(root: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{item}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("override `{item}` has an empty key")));
    }
    let raw = raw.trim();
    // Bare words that are not TOML literals are taken as strings.
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty key");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override `{item}`: `{p}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}
