//! Low-level augmentation bank and the two-view sampler used by the
//! visual contrastive branch.

mod ops;

use serde::{Deserialize, Serialize};

use crate::error::{DcenError, Result};
use crate::image::Image;
use crate::rng::Rng;

pub use ops::{
    apply_patch_permutation, color_jitter, color_ops, gaussian_blur, gaussian_kernel, grayscale,
    horizontal_flip, patch_swap, random_resized_crop, rotate, sample_crop_window, ColorJitterParams,
    ColorMode, CropWindow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Crop,
    Flip,
    Gray,
    ColorJitter,
    Blur,
    Rotation,
    Swap,
}

fn default_crop_scale() -> (f64, f64) {
    (0.2, 1.0)
}

fn default_blur_sigma() -> (f64, f64) {
    (0.1, 2.0)
}

/// One entry of an augmentation pipeline. Serialized with an `op` tag, e.g.
/// `{ op = "rotation", probability = 0.5, max_deg = 30.0 }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugOp {
    Crop {
        probability: f64,
        #[serde(default = "default_crop_scale")]
        scale: (f64, f64),
    },
    Flip {
        probability: f64,
    },
    Gray {
        probability: f64,
    },
    ColorJitter {
        probability: f64,
        brightness: f64,
        contrast: f64,
        saturation: f64,
        hue: f64,
    },
    Blur {
        probability: f64,
        #[serde(default = "default_blur_sigma")]
        sigma: (f64, f64),
    },
    Rotation {
        probability: f64,
        max_deg: f64,
    },
    Swap {
        probability: f64,
        grid: usize,
    },
}

impl AugOp {
    pub fn kind(&self) -> OpKind {
        match self {
            AugOp::Crop { .. } => OpKind::Crop,
            AugOp::Flip { .. } => OpKind::Flip,
            AugOp::Gray { .. } => OpKind::Gray,
            AugOp::ColorJitter { .. } => OpKind::ColorJitter,
            AugOp::Blur { .. } => OpKind::Blur,
            AugOp::Rotation { .. } => OpKind::Rotation,
            AugOp::Swap { .. } => OpKind::Swap,
        }
    }

    pub fn probability(&self) -> f64 {
        match *self {
            AugOp::Crop { probability, .. }
            | AugOp::Flip { probability }
            | AugOp::Gray { probability }
            | AugOp::ColorJitter { probability, .. }
            | AugOp::Blur { probability, .. }
            | AugOp::Rotation { probability, .. }
            | AugOp::Swap { probability, .. } => probability,
        }
    }

    fn validate(&self) -> Result<()> {
        let p = self.probability();
        if !(0.0..=1.0).contains(&p) {
            return Err(DcenError::Config(format!("{:?} probability {p} outside [0, 1]", self.kind())));
        }
        match *self {
            AugOp::Crop { scale: (lo, hi), .. } if !(lo > 0.0 && lo <= hi && hi <= 1.0) => {
                Err(DcenError::Config(format!("crop scale ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1")))
            }
            AugOp::Blur { sigma: (lo, hi), .. } if !(lo > 0.0 && lo <= hi) => {
                Err(DcenError::Config(format!("blur sigma range ({lo}, {hi}) must satisfy 0 < lo <= hi")))
            }
            AugOp::Rotation { max_deg, .. } if !(0.0..=180.0).contains(&max_deg) => {
                Err(DcenError::Config(format!("rotation max_deg {max_deg} outside [0, 180]")))
            }
            AugOp::Swap { grid, .. } if grid < 2 => {
                Err(DcenError::Config(format!("swap grid {grid} must be >= 2")))
            }
            AugOp::ColorJitter { brightness, contrast, saturation, hue, .. } => {
                ColorJitterParams::new(brightness, contrast, saturation, hue)
                    .validate()
                    .map_err(|e| DcenError::Config(e.to_string()))
            }
            _ => Ok(()),
        }
    }
}

/// Ordered augmentation pipeline producing `out_size × out_size` views.
///
/// Ops always execute in the fixed order crop, flip, gray, color_jitter,
/// blur, rotation, swap regardless of their order in `ops`. Each op draws
/// one uniform number to decide whether it fires, so the random stream
/// consumed by later ops does not depend on earlier outcomes' parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub out_size: usize,
    pub ops: Vec<AugOp>,
}

impl Default for AugmentationSpec {
    /// The retained combination: crop, flip, blur, rotation(30), swap(3).
    fn default() -> Self {
        AugmentationSpec {
            out_size: 32,
            ops: vec![
                AugOp::Crop { probability: 1.0, scale: default_crop_scale() },
                AugOp::Flip { probability: 0.5 },
                AugOp::Blur { probability: 0.5, sigma: default_blur_sigma() },
                AugOp::Rotation { probability: 0.5, max_deg: 30.0 },
                AugOp::Swap { probability: 0.2, grid: 3 },
            ],
        }
    }
}

/// Named augmentation-study presets, in row order.
pub const PRESET_NAMES: &[&str] = &[
    "none",
    "crop",
    "crop_flip",
    "crop_flip_gray",
    "crop_flip_cj_v1",
    "crop_flip_cj_v2",
    "crop_flip_cj_v3",
    "crop_flip_blur",
    "crop_flip_rot90",
    "crop_flip_rot60",
    "crop_flip_rot30",
    "crop_flip_swap7",
    "crop_flip_swap5",
    "crop_flip_swap3",
    "crop_flip_blur_rot30",
    "crop_flip_blur_rot30_swap3",
];

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.out_size == 0 {
            return Err(DcenError::Config("augmentation out_size must be positive".into()));
        }
        let mut kinds: Vec<OpKind> = self.ops.iter().map(AugOp::kind).collect();
        kinds.sort_unstable();
        if kinds.windows(2).any(|w| w[0] == w[1]) {
            return Err(DcenError::Config("augmentation op listed more than once".into()));
        }
        self.ops.iter().try_for_each(AugOp::validate)
    }

    pub fn identity(out_size: usize) -> Self {
        AugmentationSpec { out_size, ops: Vec::new() }
    }

    /// Augmentation-study row by name (see [`PRESET_NAMES`]). Probabilities
    /// are the study's column defaults: crop 1.0, flip 0.5, gray 0.2,
    /// color jitter 0.8, blur 0.5, rotation 0.5, swap 0.2.
    pub fn preset(name: &str, out_size: usize) -> Result<Self> {
        let crop = AugOp::Crop { probability: 1.0, scale: default_crop_scale() };
        let flip = AugOp::Flip { probability: 0.5 };
        let blur = AugOp::Blur { probability: 0.5, sigma: default_blur_sigma() };
        let rot = |max_deg: f64| AugOp::Rotation { probability: 0.5, max_deg };
        let swap = |grid: usize| AugOp::Swap { probability: 0.2, grid };
        let cj = |p: ColorJitterParams| AugOp::ColorJitter {
            probability: 0.8,
            brightness: p.brightness,
            contrast: p.contrast,
            saturation: p.saturation,
            hue: p.hue,
        };
        let ops = match name {
            "none" => vec![],
            "crop" => vec![crop],
            "crop_flip" => vec![crop, flip],
            "crop_flip_gray" => vec![crop, flip, AugOp::Gray { probability: 0.2 }],
            "crop_flip_cj_v1" => vec![crop, flip, cj(ColorJitterParams::V1)],
            "crop_flip_cj_v2" => vec![crop, flip, cj(ColorJitterParams::V2)],
            "crop_flip_cj_v3" => vec![crop, flip, cj(ColorJitterParams::V3)],
            "crop_flip_blur" => vec![crop, flip, blur],
            "crop_flip_rot90" => vec![crop, flip, rot(90.0)],
            "crop_flip_rot60" => vec![crop, flip, rot(60.0)],
            "crop_flip_rot30" => vec![crop, flip, rot(30.0)],
            "crop_flip_swap7" => vec![crop, flip, swap(7)],
            "crop_flip_swap5" => vec![crop, flip, swap(5)],
            "crop_flip_swap3" => vec![crop, flip, swap(3)],
            "crop_flip_blur_rot30" => vec![crop, flip, blur, rot(30.0)],
            "crop_flip_blur_rot30_swap3" => vec![crop, flip, blur, rot(30.0), swap(3)],
            other => {
                return Err(DcenError::Config(format!(
                    "unknown augmentation preset {other:?}; known: {}",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        Ok(AugmentationSpec { out_size, ops })
    }

    /// Ops sorted into execution order.
    fn ordered_ops(&self) -> Vec<&AugOp> {
        let mut ops: Vec<&AugOp> = self.ops.iter().collect();
        ops.sort_by_key(|op| op.kind());
        ops
    }

    /// Apply the pipeline once. Returns the view and the ops that fired.
    pub fn apply(&self, img: &Image, rng: &mut Rng) -> Result<(Image, Vec<OpKind>)> {
        let mut fired = Vec::new();
        let mut cropped = false;
        let mut out: Option<Image> = None;
        for op in self.ordered_ops() {
            let fire = rng.bernoulli(op.probability());
            if let AugOp::Crop { scale, .. } = op {
                if fire {
                    out = Some(random_resized_crop(img, *scale, self.out_size, rng)?);
                    cropped = true;
                    fired.push(OpKind::Crop);
                }
                continue;
            }
            if !cropped && out.is_none() {
                out = Some(img.resize(self.out_size, self.out_size));
            }
            if !fire {
                continue;
            }
            let cur = out.as_ref().expect("view initialised before non-crop ops");
            let next = match *op {
                AugOp::Crop { .. } => unreachable!(),
                AugOp::Flip { .. } => horizontal_flip(cur),
                AugOp::Gray { .. } => grayscale(cur),
                AugOp::ColorJitter { brightness, contrast, saturation, hue, .. } => {
                    color_jitter(cur, &ColorJitterParams::new(brightness, contrast, saturation, hue), rng)?
                }
                AugOp::Blur { sigma: (lo, hi), .. } => gaussian_blur(cur, rng.uniform_range(lo, hi))?,
                AugOp::Rotation { max_deg, .. } => {
                    rotate(cur, rng.uniform_range(-max_deg, max_deg), max_deg)?
                }
                AugOp::Swap { grid, .. } => patch_swap(cur, grid, rng)?,
            };
            fired.push(op.kind());
            out = Some(next);
        }
        let out = out.unwrap_or_else(|| img.resize(self.out_size, self.out_size));
        Ok((out, fired))
    }
}

/// Two independently drawn views of `img` under the same spec.
pub fn two_views(img: &Image, spec: &AugmentationSpec, rng: &mut Rng) -> Result<(Image, Image)> {
    let (v1, _) = spec.apply(img, rng)?;
    let (v2, _) = spec.apply(img, rng)?;
    Ok((v1, v2))
}
