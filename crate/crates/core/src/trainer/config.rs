use serde::{Deserialize, Serialize};

use crate::augment::AugmentationSpec;
use crate::data::{GzslDataset, InputKind};
use crate::encoders::{ArchConfig, BackboneKind, DecoderInput};
use crate::error::{DcenError, Result};

/// Which objective terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Alignment of `f` and `h` on unmasked attributes only.
    BasicZsl,
    /// Masked-attribute triplet plus attribute prediction.
    ScmOnly,
    /// Basic alignment plus instance discrimination.
    VcmOnly,
    FullDcen,
}

impl TrainMode {
    pub fn uses_semantic_contrast(self) -> bool {
        matches!(self, TrainMode::ScmOnly | TrainMode::FullDcen)
    }

    pub fn uses_visual_contrast(self) -> bool {
        matches!(self, TrainMode::VcmOnly | TrainMode::FullDcen)
    }
}

/// Network widths. Input sizes and `attr_dim` come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub conv_widths: Vec<usize>,
    pub mlp_hidden: usize,
    pub decoder_input: DecoderInput,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let arch = ArchConfig::default();
        ModelConfig {
            embed_dim: arch.embed_dim,
            conv_widths: arch.conv_widths,
            mlp_hidden: arch.mlp_hidden,
            decoder_input: arch.decoder_input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Weight of the instance-discrimination term.
    pub lambda1: f64,
    /// Weight of the attribute-prediction term.
    pub lambda2: f64,
    /// Softmax temperature of the instance-discrimination term.
    pub tau: f64,
    /// Momentum of the key-encoder update.
    pub key_momentum: f64,
    /// Percentage of attribute positions masked in a chosen row.
    pub sigma: f64,
    /// Probability that a class row is masked at all.
    pub choose_p: f64,
    /// Depth of the semantic encoder and of the decoder.
    pub k: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub queue_capacity: usize,
    /// Validation cadence in steps; 0 disables periodic evaluation.
    pub eval_every: u64,
    /// Optional hinge margin for the triplet term; absent means no hinge.
    pub hinge_margin: Option<f64>,
    pub augmentation: AugmentationSpec,
    /// Named augmentation-study row; replaces `augmentation` when set.
    pub augmentation_preset: Option<String>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::FullDcen,
            lambda1: 0.1,
            lambda2: 0.1,
            tau: 0.07,
            key_momentum: 0.999,
            sigma: 25.0,
            choose_p: 0.5,
            k: 2,
            batch_size: 32,
            steps: 500,
            learning_rate: 0.05,
            sgd_momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            queue_capacity: 1024,
            eval_every: 100,
            hinge_margin: None,
            augmentation: AugmentationSpec::default(),
            augmentation_preset: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DcenError::Config(m));
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return bad(format!("lambda1 and lambda2 must be >= 0 (got {}, {})", self.lambda1, self.lambda2));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be > 0 (got {})", self.tau));
        }
        if !(0.0..=1.0).contains(&self.key_momentum) {
            return bad(format!("key_momentum must lie in [0, 1] (got {})", self.key_momentum));
        }
        if !(0.0..=100.0).contains(&self.sigma) {
            return bad(format!("sigma must lie in [0, 100] (got {})", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.choose_p) {
            return bad(format!("choose_p must lie in [0, 1] (got {})", self.choose_p));
        }
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2 (got {})", self.batch_size));
        }
        if self.queue_capacity == 0 {
            return bad("queue_capacity must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning_rate and weight_decay must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return bad(format!("sgd_momentum must lie in [0, 1) (got {})", self.sgd_momentum));
        }
        if let Some(m) = self.hinge_margin {
            if !m.is_finite() {
                return bad("hinge_margin must be finite".into());
            }
        }
        self.resolved_augmentation()?.validate()
    }

    pub fn resolved_augmentation(&self) -> Result<AugmentationSpec> {
        match &self.augmentation_preset {
            Some(name) => AugmentationSpec::preset(name, self.augmentation.out_size),
            None => Ok(self.augmentation.clone()),
        }
    }

    /// Architecture for `ds` under this config.
    pub fn arch_for(&self, ds: &GzslDataset) -> Result<ArchConfig> {
        let kind = ds.input_kind().ok_or_else(|| DcenError::EmptySplit("dataset has no samples".into()))?;
        let base = ArchConfig {
            attr_dim: ds.attr_dim(),
            embed_dim: self.model.embed_dim,
            k: self.k,
            conv_widths: self.model.conv_widths.clone(),
            mlp_hidden: self.model.mlp_hidden,
            decoder_input: self.model.decoder_input,
            ..ArchConfig::default()
        };
        let arch = match kind {
            InputKind::Images { channels, .. } => ArchConfig {
                backbone: BackboneKind::SmallConv,
                image_size: self.augmentation.out_size,
                channels,
                ..base
            },
            InputKind::Features { dim } => {
                if self.mode.uses_visual_contrast() {
                    return Err(DcenError::Config(format!(
                        "mode {:?} needs images; feature-vector datasets support basic_zsl and scm_only",
                        self.mode
                    )));
                }
                ArchConfig { backbone: BackboneKind::MlpOnFeatures, feature_dim: dim, ..base }
            }
        };
        arch.validate()?;
        Ok(arch)
    }
}
