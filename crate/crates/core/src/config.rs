//! Experiment configuration: a versioned JSON schema covering data source,
//! model shape, the variant grid, and the evaluation attack.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::AttackConfig;
use crate::error::{Error, Result};
use crate::models::{Activation, ConvBlock, HeadInput, ModelSpec, Variant};
use crate::train::{AdversarialConfig, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic { n: usize, bands: usize, frames: usize, seed: u64 },
    Audio { audio_dir: PathBuf, emotion_csv: PathBuf, midlevel_csv: Option<PathBuf> },
}

/// Architecture shared by all variants; the variant and input shape are
/// filled in per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub conv_blocks: Vec<ConvBlock>,
    pub embedding_dim: usize,
    pub activation: Activation,
    pub head_input: HeadInput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantEntry {
    /// Output directory name, e.g. "a2e" or "aa2b2e".
    pub label: String,
    pub variant: Variant,
    /// Full training configuration; adversarially trained variants carry a
    /// schedule here.
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub source: DataSource,
    pub split_seed: u64,
    pub model: ModelShape,
    pub variants: Vec<VariantEntry>,
    /// Attack applied to the test split during evaluation.
    pub eval_attack: AttackConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ingestion(path, format!("cannot read config: {e}")))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("config serializes"))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.variants.is_empty() {
            return Err(Error::config("config lists no variants".to_string()));
        }
        let mut labels: Vec<&str> = self.variants.iter().map(|v| v.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.variants.len() {
            return Err(Error::config("duplicate variant labels".to_string()));
        }
        for v in &self.variants {
            v.train.validate()?;
        }
        self.eval_attack.validate()?;
        if let DataSource::Synthetic { n, bands, frames, .. } = &self.source {
            if *n < 20 || *bands < 7 || *frames == 0 {
                return Err(Error::config(format!(
                    "degenerate synthetic source: n={n}, bands={bands}, frames={frames}"
                )));
            }
        }
        Ok(())
    }

    /// Digest over the canonical JSON form; changes iff a field changes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(self).expect("config serializes"));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Input shape the data source will produce.
    pub fn input_shape(&self) -> (usize, usize) {
        match &self.source {
            DataSource::Synthetic { bands, frames, .. } => (*bands, *frames),
            // full-scale preprocessing: ~178 log-frequency bands, 313 frames
            DataSource::Audio { .. } => (178, 313),
        }
    }

    /// Concrete model spec for one variant entry.
    pub fn spec_for(&self, entry: &VariantEntry) -> ModelSpec {
        let (bands, frames) = self.input_shape();
        ModelSpec {
            variant: entry.variant,
            conv_blocks: self.model.conv_blocks.clone(),
            embedding_dim: self.model.embedding_dim,
            n_midlevel: 7,
            n_emotions: 8,
            activation: self.model.activation,
            head_input: self.model.head_input,
            input_bands: bands,
            input_frames: frames,
        }
    }

    /// Desk-scale preset: synthetic corpus (400 samples, 32 x 64), a small
    /// two-block CNN with a flattened head, 5 seeds, and the evaluation
    /// attack at epsilon 0.02 / eta 0.005 / 200 iterations. The five-variant
    /// grid finishes on a single laptop core in well under an hour.
    pub fn toy_preset() -> ExperimentConfig {
        let clean_train = TrainConfig {
            learning_rate: 0.002,
            batch_size: 8,
            max_epochs: 120,
            patience: 20,
            n_seeds: 5,
            adversarial: None,
        };
        // adversarial runs are ~10x the per-epoch cost; fewer epochs keep
        // the preset fast, and robustness saturates well before 80
        let adv_train = TrainConfig {
            max_epochs: 80,
            patience: 15,
            adversarial: Some(AdversarialConfig {
                every_n_epochs: 5,
                attack: AttackConfig {
                    epsilon: 0.02,
                    eta: 0.005,
                    max_iterations: 50,
                    ..AttackConfig::default()
                },
            }),
            ..clean_train.clone()
        };
        ExperimentConfig {
            version: CONFIG_VERSION,
            source: DataSource::Synthetic { n: 400, bands: 32, frames: 64, seed: 7 },
            split_seed: 1,
            model: ModelShape {
                conv_blocks: vec![
                    ConvBlock { out_channels: 4, kernel: 3, pool: 2 },
                    ConvBlock { out_channels: 8, kernel: 3, pool: 2 },
                ],
                embedding_dim: 64,
                activation: Activation::Relu,
                head_input: HeadInput::Flatten,
            },
            variants: vec![
                VariantEntry { label: "a2e".into(), variant: Variant::A2E, train: clean_train.clone() },
                VariantEntry {
                    label: "a2b2e".into(),
                    variant: Variant::A2B2E,
                    train: clean_train.clone(),
                },
                VariantEntry { label: "a2m2e".into(), variant: Variant::A2M2E, train: clean_train },
                VariantEntry { label: "aa2e".into(), variant: Variant::A2E, train: adv_train.clone() },
                VariantEntry { label: "aa2b2e".into(), variant: Variant::A2B2E, train: adv_train },
            ],
            eval_attack: AttackConfig {
                epsilon: 0.02,
                eta: 0.005,
                max_iterations: 200,
                ..AttackConfig::default()
            },
        }
    }

    /// Full-scale defaults: 10 seeds, Adam lr 0.0005, 200 epochs with
    /// patience 50, and the 1000-iteration evaluation attack.
    pub fn full_scale_defaults(source: DataSource) -> ExperimentConfig {
        let clean_train = TrainConfig::default();
        let adv_train =
            TrainConfig { adversarial: Some(AdversarialConfig::default()), ..TrainConfig::default() };
        let (bands, frames) = match &source {
            DataSource::Synthetic { bands, frames, .. } => (*bands, *frames),
            DataSource::Audio { .. } => (178, 313),
        };
        let template = ModelSpec::default_spec(Variant::A2E, bands, frames);
        ExperimentConfig {
            version: CONFIG_VERSION,
            source,
            split_seed: 1,
            model: ModelShape {
                conv_blocks: template.conv_blocks,
                embedding_dim: template.embedding_dim,
                activation: template.activation,
                head_input: template.head_input,
            },
            variants: vec![
                VariantEntry { label: "a2e".into(), variant: Variant::A2E, train: clean_train.clone() },
                VariantEntry {
                    label: "a2b2e".into(),
                    variant: Variant::A2B2E,
                    train: clean_train.clone(),
                },
                VariantEntry { label: "a2m2e".into(), variant: Variant::A2M2E, train: clean_train },
                VariantEntry { label: "aa2e".into(), variant: Variant::A2E, train: adv_train.clone() },
                VariantEntry { label: "aa2b2e".into(), variant: Variant::A2B2E, train: adv_train },
            ],
            eval_attack: AttackConfig::default(),
        }
    }
}
