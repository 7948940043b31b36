//! Procedural attribute-conditioned image generator.
//!
//! Each attribute dimension owns one visual property of the rendered image:
//!
//! * `j % 3 == 0`: a signed RGB direction added to the global tint,
//! * `j % 3 == 1`: an oriented sinusoidal stripe texture,
//! * `j % 3 == 2`: a coloured shape (square, disk or cross) in one cell of
//!   a 3×3 grid, blended with opacity proportional to the attribute.
//!
//! The property magnitude is proportional to the attribute value, so an
//! unseen class is rendered by the same mechanism as a seen one and
//! semantic transfer is measurable.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AttributeMatrix, ClassId, GzslDataset, Sample, SampleData, Split};
use crate::error::{DcenError, Result};
use crate::image::Image;
use crate::rng::Rng;

const CHANNELS: usize = 3;
const GRID: usize = 3;
const ATTR_JITTER: f64 = 0.05;
const TINT_SCALE: f64 = 0.9;
const STRIPE_AMPLITUDE: f64 = 0.12;
const SHAPE_OPACITY: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_seen: usize,
    pub num_unseen: usize,
    pub attr_dim: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_seen: 8,
            num_unseen: 4,
            attr_dim: 16,
            samples_per_class: 40,
            image_size: 32,
            noise_std: 0.05,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(DcenError::Config(msg));
        if self.num_seen < 2 {
            return fail(format!("num_seen must be >= 2 (got {})", self.num_seen));
        }
        if self.num_unseen < 1 {
            return fail(format!("num_unseen must be >= 1 (got {})", self.num_unseen));
        }
        if self.attr_dim < 4 {
            return fail(format!("attr_dim must be >= 4 (got {})", self.attr_dim));
        }
        if self.image_size < 16 {
            return fail(format!("image_size must be >= 16 (got {})", self.image_size));
        }
        if self.samples_per_class < 1 {
            return fail(format!("samples_per_class must be >= 1 (got {})", self.samples_per_class));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return fail(format!("noise_std must be finite and >= 0 (got {})", self.noise_std));
        }
        Ok(())
    }

    /// `(train, val, test_seen)` counts for one seen class: 70/10/20 with
    /// integer floors, remainder to `test_seen`.
    pub fn seen_split_counts(&self) -> (usize, usize, usize) {
        let n = self.samples_per_class;
        let train = n * 7 / 10;
        let val = n / 10;
        (train, val, n - train - val)
    }
}

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Square,
    Disk,
    Cross,
}

#[derive(Debug, Clone)]
enum Pattern {
    Tint([f64; 3]),
    Stripes { freq: f64, theta: f64 },
    Shape { kind: ShapeKind, cell: (usize, usize), color: [f64; 3] },
}

fn draw_patterns(cfg: &SynthConfig) -> Vec<Pattern> {
    let mut rng = Rng::derived(cfg.seed, &[b"patterns"]);
    let cells = rng.permutation(GRID * GRID);
    let mut shape_count = 0;
    (0..cfg.attr_dim)
        .map(|j| match j % 3 {
            0 => Pattern::Tint([
                rng.uniform_range(-1.0, 1.0),
                rng.uniform_range(-1.0, 1.0),
                rng.uniform_range(-1.0, 1.0),
            ]),
            1 => Pattern::Stripes {
                freq: (2 + rng.below(4)) as f64,
                theta: (j / 3) as f64 * PI / 4.0 + rng.uniform_range(-0.2, 0.2),
            },
            _ => {
                let cell = cells[shape_count % cells.len()];
                let kind = match shape_count % 3 {
                    0 => ShapeKind::Square,
                    1 => ShapeKind::Disk,
                    _ => ShapeKind::Cross,
                };
                shape_count += 1;
                Pattern::Shape {
                    kind,
                    cell: (cell / GRID, cell % GRID),
                    color: [rng.uniform(), rng.uniform(), rng.uniform()],
                }
            }
        })
        .collect()
}

fn draw_attributes(cfg: &SynthConfig) -> Array2<f64> {
    let n = cfg.num_seen + cfg.num_unseen;
    let mut rng = Rng::derived(cfg.seed, &[b"attributes"]);
    loop {
        let values = Array2::from_shape_fn((n, cfg.attr_dim), |_| rng.uniform());
        let zero_row = values.rows().into_iter().any(|r| r.iter().all(|&v| v == 0.0));
        let dup = (0..n).any(|i| ((i + 1)..n).any(|k| values.row(i) == values.row(k)));
        if !zero_row && !dup {
            return values;
        }
    }
}

fn shape_covers(kind: ShapeKind, dy: f64, dx: f64, radius: f64) -> bool {
    match kind {
        ShapeKind::Square => dy.abs() <= radius && dx.abs() <= radius,
        ShapeKind::Disk => dy * dy + dx * dx <= radius * radius,
        ShapeKind::Cross => {
            let arm = (radius / 3.0).max(1.0);
            (dy.abs() <= arm && dx.abs() <= radius) || (dx.abs() <= arm && dy.abs() <= radius)
        }
    }
}

fn render(patterns: &[Pattern], attrs: &[f64], size: usize, noise_std: f64, rng: &mut Rng) -> Image {
    let jittered: Vec<f64> =
        attrs.iter().map(|&a| (a + rng.normal(0.0, ATTR_JITTER)).clamp(0.0, 1.0)).collect();
    let n_tint = patterns.iter().filter(|p| matches!(p, Pattern::Tint(_))).count().max(1);
    let tint_gain = TINT_SCALE / (n_tint as f64).sqrt();

    let mut base = [0.5f64; 3];
    for (p, &a) in patterns.iter().zip(&jittered) {
        if let Pattern::Tint(dir) = p {
            for c in 0..CHANNELS {
                base[c] += tint_gain * (a - 0.5) * dir[c];
            }
        }
    }

    let cell = size as f64 / GRID as f64;
    let radius = cell * 0.3;
    // Per-sample phase and placement jitter, drawn in pattern order.
    let draws: Vec<(f64, f64, f64)> = patterns
        .iter()
        .map(|_| {
            (rng.uniform_range(0.0, 2.0 * PI), rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0))
        })
        .collect();

    let mut img = Image::from_fn(size, size, CHANNELS, |(_, _, c)| base[c]);
    let data = img.data_mut();
    for y in 0..size {
        for x in 0..size {
            let mut texture = 0.0;
            for ((p, &a), &(phase, _, _)) in patterns.iter().zip(&jittered).zip(&draws) {
                if let Pattern::Stripes { freq, theta } = p {
                    let t = (x as f64 * theta.cos() + y as f64 * theta.sin()) / size as f64;
                    texture += STRIPE_AMPLITUDE * a * (2.0 * PI * freq * t + phase).sin();
                }
            }
            for c in 0..CHANNELS {
                data[[y, x, c]] += texture;
            }
            for ((p, &a), &(_, oy, ox)) in patterns.iter().zip(&jittered).zip(&draws) {
                if let Pattern::Shape { kind, cell: (gy, gx), color } = p {
                    let cy = (*gy as f64 + 0.5) * cell + oy;
                    let cx = (*gx as f64 + 0.5) * cell + ox;
                    if shape_covers(*kind, y as f64 + 0.5 - cy, x as f64 + 0.5 - cx, radius) {
                        let alpha = SHAPE_OPACITY * a;
                        for c in 0..CHANNELS {
                            data[[y, x, c]] = data[[y, x, c]] * (1.0 - alpha) + color[c] * alpha;
                        }
                    }
                }
            }
        }
    }
    if noise_std > 0.0 {
        data.mapv_inplace(|v| v + rng.normal(0.0, noise_std));
    }
    img.clamp01()
}

/// Deterministic synthetic GZSL dataset.
///
/// Classes `0..num_seen` are seen, the next `num_unseen` ids are unseen.
/// Unseen classes contribute only `test_unseen` samples; seen classes are
/// split per [`SynthConfig::seen_split_counts`].
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<GzslDataset> {
    cfg.validate()?;
    let num_classes = cfg.num_seen + cfg.num_unseen;
    let values = draw_attributes(cfg);
    let class_ids: Vec<ClassId> = (0..num_classes as u32).map(ClassId).collect();
    let attributes = AttributeMatrix::new(values, class_ids.clone())?;
    let patterns = draw_patterns(cfg);
    let (n_train, n_val, _) = cfg.seen_split_counts();

    let mut samples = Vec::with_capacity(num_classes * cfg.samples_per_class);
    for (ci, &class) in class_ids.iter().enumerate() {
        let seen = ci < cfg.num_seen;
        let row = attributes.values().row(ci).to_vec();
        for k in 0..cfg.samples_per_class {
            let split = if !seen {
                Split::TestUnseen
            } else if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::TestSeen
            };
            let mut rng =
                Rng::derived(cfg.seed, &[b"sample", &(ci as u64).to_le_bytes(), &(k as u64).to_le_bytes()]);
            let img = render(&patterns, &row, cfg.image_size, cfg.noise_std, &mut rng);
            samples.push(Sample {
                id: samples.len() as u64,
                label: class,
                split,
                data: SampleData::Image(img),
            });
        }
    }

    let seen_classes: BTreeSet<ClassId> = class_ids[..cfg.num_seen].iter().copied().collect();
    let unseen_classes: BTreeSet<ClassId> = class_ids[cfg.num_seen..].iter().copied().collect();
    Ok(GzslDataset { samples, attributes, seen_classes, unseen_classes })
}
