use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{ClassifierConfig, HeadKind};
use crate::error::{Error, Result};
use crate::labelgraph::LabelConfig;
use crate::loss::LossConfig;
use crate::pooling::{PoolingConfig, PoolingKind};

/// `[train]` section of a model config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no cap.
    pub max_steps: usize,
    pub base_lr: f64,
    pub decay_rate: f64,
    pub decay_interval: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Steps between metric log records; 0 logs only at the end.
    pub eval_interval: usize,
    /// Cut-off for GAP during training.
    pub eval_k: usize,
    /// Train on the union of the training and validation splits.
    pub merge_validation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 5,
            max_steps: 0,
            base_lr: 0.0006,
            decay_rate: 0.95,
            decay_interval: 2000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            eval_interval: 500,
            eval_k: 20,
            merge_validation: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return fail("base_lr must be positive");
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return fail("decay_rate must lie in (0, 1]");
        }
        if self.decay_interval == 0 {
            return fail("decay_interval must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return fail("Adam needs 0 <= beta < 1 and epsilon > 0");
        }
        if self.eval_k == 0 {
            return fail("eval_k must be positive");
        }
        Ok(())
    }
}

/// Full pipeline description. Every key has a default, so an empty file is valid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub seed: u64,
    pub pooling: PoolingConfig,
    pub classifier: ClassifierConfig,
    pub label: LabelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            pooling: PoolingConfig::default(),
            classifier: ClassifierConfig::default(),
            label: LabelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }

    pub fn validate(&self) -> Result<()> {
        self.classifier.validate()?;
        self.label.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        let frames_head = self.classifier.kind == HeadKind::ManyToMany;
        let no_pool = self.pooling.kind == PoolingKind::None;
        if frames_head != no_pool {
            return Err(Error::Config(if frames_head {
                "the many_to_many head reads frames directly; set pooling.kind = \"none\"".into()
            } else {
                "pooling.kind = \"none\" is only valid with the many_to_many head".into()
            }));
        }
        if !no_pool {
            self.pooling.validate()?;
        }
        Ok(())
    }
}
