//! Visual encoder `f`, momentum key encoder `g`, semantic encoder `h` and
//! masked-attribute decoder `ĥ`.

mod block;
mod decoder;
mod semantic;
mod visual;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub use block::{FcBlock, FcCache};
pub use decoder::{AttributeDecoder, DecoderCache};
pub use semantic::{SemanticCache, SemanticEncoder};
pub use visual::{ConvBlock, ConvNet, MlpNet, VisualBatch, VisualCache, VisualEncoder};

use crate::error::{DcenError, Result};
use crate::nn::{l2_normalize_rows, param_distance, zeros_like, NamedView, NamedViewMut, Parameters};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    SmallConv,
    MlpOnFeatures,
}

/// Which form of the visual and semantic features the decoder consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderInput {
    #[default]
    Raw,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub backbone: BackboneKind,
    /// Square image side for `small_conv`.
    pub image_size: usize,
    pub channels: usize,
    /// Input width for `mlp_on_features`.
    pub feature_dim: usize,
    pub attr_dim: usize,
    pub embed_dim: usize,
    /// Depth of `h` and `ĥ`.
    pub k: usize,
    pub conv_widths: Vec<usize>,
    pub mlp_hidden: usize,
    pub decoder_input: DecoderInput,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            backbone: BackboneKind::SmallConv,
            image_size: 32,
            channels: 3,
            feature_dim: 0,
            attr_dim: 16,
            embed_dim: 128,
            k: 2,
            conv_widths: vec![32, 64, 128],
            mlp_hidden: 256,
            decoder_input: DecoderInput::Raw,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let dim = |m: String| Err(DcenError::DimensionMismatch(m));
        if self.k == 0 {
            return Err(DcenError::Config("k must be at least 1".into()));
        }
        if self.embed_dim == 0 {
            return dim("embed_dim must be positive".into());
        }
        if self.attr_dim == 0 {
            return dim("attr_dim must be positive".into());
        }
        match self.backbone {
            BackboneKind::SmallConv => {
                if self.channels == 0 || self.conv_widths.is_empty() || self.conv_widths.contains(&0) {
                    return dim("small_conv needs positive channels and conv widths".into());
                }
                let side = self.conv_widths.iter().fold(self.image_size, |s, _| s.div_ceil(2));
                if self.image_size == 0 || side == 0 {
                    return dim(format!(
                        "image_size {} too small for {} conv blocks",
                        self.image_size,
                        self.conv_widths.len()
                    ));
                }
            }
            BackboneKind::MlpOnFeatures => {
                if self.feature_dim == 0 || self.mlp_hidden == 0 {
                    return dim("mlp_on_features needs positive feature_dim and mlp_hidden".into());
                }
            }
        }
        Ok(())
    }
}

/// Raw outputs and their L2-normalized rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub raw: Array2<f64>,
    pub unit: Array2<f64>,
    pub norms: Array1<f64>,
}

impl ForwardOutput {
    pub fn from_raw(raw: Array2<f64>) -> Self {
        let (unit, norms) = l2_normalize_rows(&raw);
        ForwardOutput { raw, unit, norms }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSet {
    pub arch: ArchConfig,
    /// Query encoder `f`.
    pub visual: VisualEncoder,
    /// Momentum key encoder `g`.
    pub key: VisualEncoder,
    /// Semantic encoder `h`.
    pub semantic: SemanticEncoder,
    /// Attribute decoder `ĥ`.
    pub decoder: AttributeDecoder,
}

/// Gradient accumulators for the trainable networks (`g` has none).
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub visual: VisualEncoder,
    pub semantic: SemanticEncoder,
    pub decoder: AttributeDecoder,
}

pub fn init_encoders(arch: &ArchConfig, seed: u64) -> Result<EncoderSet> {
    arch.validate()?;
    let mut rng_f = Rng::derived(seed, &[b"init", b"visual"]);
    let mut rng_h = Rng::derived(seed, &[b"init", b"semantic"]);
    let mut rng_d = Rng::derived(seed, &[b"init", b"decoder"]);
    let visual = match arch.backbone {
        BackboneKind::SmallConv => VisualEncoder::Conv(ConvNet::new(
            arch.channels,
            arch.image_size,
            &arch.conv_widths,
            arch.embed_dim,
            &mut rng_f,
        )),
        BackboneKind::MlpOnFeatures => {
            VisualEncoder::Mlp(MlpNet::new(arch.feature_dim, arch.mlp_hidden, arch.embed_dim, &mut rng_f))
        }
    };
    if visual.embed_dim() != arch.embed_dim {
        return Err(DcenError::DimensionMismatch(format!(
            "backbone emits {} dims, embed_dim is {}",
            visual.embed_dim(),
            arch.embed_dim
        )));
    }
    Ok(EncoderSet {
        arch: arch.clone(),
        key: visual.clone(),
        visual,
        semantic: SemanticEncoder::new(arch.attr_dim, arch.embed_dim, arch.k, &mut rng_h),
        decoder: AttributeDecoder::new(arch.embed_dim, arch.embed_dim, arch.attr_dim, arch.k, &mut rng_d),
    })
}

impl EncoderSet {
    pub fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads {
            visual: zeros_like(&self.visual),
            semantic: zeros_like(&self.semantic),
            decoder: zeros_like(&self.decoder),
        }
    }

    /// Eval-mode `f`.
    pub fn visual_forward(&self, batch: &VisualBatch) -> Result<ForwardOutput> {
        Ok(ForwardOutput::from_raw(self.visual.forward_eval(batch)?))
    }

    /// Eval-mode `h` on unmasked attributes.
    pub fn semantic_forward(&self, attrs: &Array2<f64>) -> Result<ForwardOutput> {
        Ok(ForwardOutput::from_raw(self.semantic.forward_eval(attrs)?))
    }

    /// `W_g ← m·W_g + (1−m)·W_f` over trainable parameters. Normalization
    /// buffers of `g` are not touched.
    pub fn momentum_update(&mut self, m: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&m) {
            return Err(DcenError::InvalidArgument(format!("momentum {m} outside [0, 1]")));
        }
        let src = self.visual.params();
        for ((_, mut g), (_, f)) in self.key.params_mut().into_iter().zip(src) {
            g.zip_mut_with(&f, |g, &f| *g = m * *g + (1.0 - m) * f);
        }
        Ok(())
    }

    /// `‖W_g − W_f‖₂` over all trainable parameters.
    pub fn key_gap(&self) -> f64 {
        param_distance(&self.key, &self.visual)
    }
}

/// All tensors of the set in archive order: parameters then buffers, per
/// network, with `f.`, `g.`, `h.` and `hhat.` prefixes.
impl Parameters for EncoderSet {
    fn params(&self) -> Vec<NamedView<'_>> {
        let mut out = crate::nn::prefixed("f", self.visual.params());
        out.extend(crate::nn::prefixed("g", self.key.params()));
        out.extend(crate::nn::prefixed("h", self.semantic.params()));
        out.extend(crate::nn::prefixed("hhat", self.decoder.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        let mut out = crate::nn::prefixed("f", self.visual.params_mut());
        out.extend(crate::nn::prefixed("g", self.key.params_mut()));
        out.extend(crate::nn::prefixed("h", self.semantic.params_mut()));
        out.extend(crate::nn::prefixed("hhat", self.decoder.params_mut()));
        out
    }

    fn buffers(&self) -> Vec<NamedView<'_>> {
        let mut out = crate::nn::prefixed("f", self.visual.buffers());
        out.extend(crate::nn::prefixed("g", self.key.buffers()));
        out.extend(crate::nn::prefixed("h", self.semantic.buffers()));
        out.extend(crate::nn::prefixed("hhat", self.decoder.buffers()));
        out
    }

    fn buffers_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        let mut out = crate::nn::prefixed("f", self.visual.buffers_mut());
        out.extend(crate::nn::prefixed("g", self.key.buffers_mut()));
        out.extend(crate::nn::prefixed("h", self.semantic.buffers_mut()));
        out.extend(crate::nn::prefixed("hhat", self.decoder.buffers_mut()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params_equal;
    use ndarray::Array4;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            image_size: 16,
            conv_widths: vec![4, 8],
            embed_dim: 12,
            attr_dim: 6,
            ..ArchConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_key_is_a_copy() {
        let a = init_encoders(&small_arch(), 3).unwrap();
        let b = init_encoders(&small_arch(), 3).unwrap();
        assert!(params_equal(&a, &b));
        assert_eq!(a.key_gap(), 0.0);
        let c = init_encoders(&small_arch(), 4).unwrap();
        assert!(!params_equal(&a, &c));
    }

    #[test]
    fn conv_output_shape_and_unit_rows() {
        let arch = ArchConfig::default();
        let enc = init_encoders(&arch, 1).unwrap();
        let mut rng = Rng::seed_from(0);
        let x = Array4::from_shape_fn((3, 5, 32, 32), |_| rng.uniform());
        let out = enc.visual_forward(&VisualBatch::Images(x)).unwrap();
        assert_eq!(out.unit.dim(), (5, 128));
        for r in out.unit.rows() {
            assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_spatial_size_is_rejected() {
        let enc = init_encoders(&small_arch(), 1).unwrap();
        let x = Array4::zeros((3, 2, 20, 20));
        assert!(matches!(enc.visual_forward(&VisualBatch::Images(x)), Err(DcenError::DimensionMismatch(_))));
    }

    #[test]
    fn invalid_arch_is_rejected() {
        let arch = ArchConfig { embed_dim: 0, ..small_arch() };
        assert!(init_encoders(&arch, 0).is_err());
        let arch = ArchConfig { k: 0, ..small_arch() };
        assert!(init_encoders(&arch, 0).is_err());
    }

    #[test]
    fn momentum_limits() {
        let mut enc = init_encoders(&small_arch(), 2).unwrap();
        for (_, mut p) in enc.visual.params_mut() {
            p.mapv_inplace(|v| v + 0.5);
        }
        let key_before = enc.key.clone();
        enc.momentum_update(1.0).unwrap();
        assert!(params_equal(&enc.key, &key_before));
        enc.momentum_update(0.0).unwrap();
        assert!(params_equal(&enc.key, &enc.visual));
        assert!(enc.momentum_update(1.5).is_err());
        assert!(enc.momentum_update(-0.1).is_err());
    }
}
