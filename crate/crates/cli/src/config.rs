//! Run configuration: one JSON file plus command-line overrides, recorded in
//! every artifact.

use std::path::Path;

use anyhow::{Context, Result};
use doclm::corpus::SynthConfig;
use doclm::sample::SampleConfig;
use doclm::train::TrainConfig;
use doclm::{Codec, CodecConfig, DocSchema, ModelConfig};
use serde::{Deserialize, Serialize};

/// Transformer shape; the vocabulary size comes from the codec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub context_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: Option<usize>,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(0);
        ModelSection {
            context_len: m.context_len,
            d_model: m.d_model,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            dropout: m.dropout,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            context_len: self.context_len,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            dropout: self.dropout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema: DocSchema,
    pub codec: CodecConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub corpus: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: DocSchema::publaynet(),
            codec: CodecConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            sample: SampleConfig::greedy(),
            corpus: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn codec(&self) -> Result<Codec> {
        Ok(Codec::new(self.schema.clone(), self.codec.clone())?)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}
