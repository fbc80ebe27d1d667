//! Sectioned run configuration (`[data]`, `[model]`, `[train]`, `[eval]`,
//! `[pretrain]`), read from TOML. Every section and key is optional and falls
//! back to the reference recipe; unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{AugmentConfig, TRAIN_SPLIT, VALIDATION_SPLIT};
use crate::error::{bail, Error, Result};
use crate::model::{BackboneSpec, HeadConfig};
use crate::pretrain::PretrainConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Keep one random frame out of every `stride` (training only).
    pub stride: usize,
    /// Defaults to the model input resolution.
    pub crop_size: Option<usize>,
    pub crop_padding: usize,
    pub hflip_probability: f64,
    pub train_split: String,
    pub val_split: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            stride: 10,
            crop_size: None,
            crop_padding: 8,
            hflip_probability: 0.5,
            train_split: TRAIN_SPLIT.into(),
            val_split: VALIDATION_SPLIT.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: String,
    pub input_resolution: usize,
    /// Stem width; 64 for the reference networks.
    pub base_width: usize,
    pub init_seed: u64,
    pub n_conv: usize,
    pub kernel: usize,
    pub stride: usize,
    pub hidden_channels: usize,
    pub n_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let head = HeadConfig::default();
        ModelConfig {
            backbone: "resnet50".into(),
            input_resolution: 224,
            base_width: 64,
            init_seed: 0,
            n_conv: head.n_conv,
            kernel: head.kernel,
            stride: head.stride,
            hidden_channels: head.hidden_channels,
            n_classes: head.n_classes,
        }
    }
}

impl ModelConfig {
    pub fn backbone_spec(&self) -> Result<BackboneSpec> {
        Ok(BackboneSpec::from_name(&self.backbone, self.input_resolution)?.with_base_width(self.base_width))
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            n_conv: self.n_conv,
            kernel: self.kernel,
            stride: self.stride,
            hidden_channels: self.hidden_channels,
            n_classes: self.n_classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub batch_size: usize,
    pub split: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            batch_size: 64,
            split: VALIDATION_SPLIT.into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub pretrain: PretrainConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.head_config().validate()?;
        self.model.backbone_spec()?.feature_shape()?;
        self.augment().validate()?;
        if self.data.stride < 1 {
            bail!(Config, "data.stride must be >= 1");
        }
        if self.augment().crop_size != self.model.input_resolution {
            bail!(Config, "data.crop_size must equal model.input_resolution");
        }
        if self.eval.batch_size == 0 {
            bail!(Config, "eval.batch_size must be positive");
        }
        self.pretrain.validate()?;
        Ok(())
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            crop_size: self.data.crop_size.unwrap_or(self.model.input_resolution),
            crop_padding: self.data.crop_padding,
            hflip_probability: self.data.hflip_probability,
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Rebuilds a config stored in a checkpoint and checks it against the stored hash.
    pub fn from_checkpoint(config: &serde_json::Value, expected_hash: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_value(config.clone()).map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
        if cfg.hash() != expected_hash {
            bail!(Config, "checkpoint config does not match its hash {expected_hash}");
        }
        Ok(cfg)
    }
}
