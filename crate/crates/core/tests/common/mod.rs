//! Helpers shared by the integration tests.
#![allow(dead_code)]

use dcen::augment::AugmentationSpec;
use dcen::data::{generate_synthetic, GzslDataset, SynthConfig};
use dcen::encoders::{init_encoders, ArchConfig, EncoderSet};
use dcen::nn::Parameters;
use dcen::rng::Rng;
use dcen::trainer::{ModelConfig, TrainConfig};
use ndarray::Array2;

/// A dataset small enough for tests that train.
pub fn tiny_dataset(seed: u64) -> GzslDataset {
    generate_synthetic(&SynthConfig {
        num_seen: 4,
        num_unseen: 2,
        attr_dim: 6,
        samples_per_class: 10,
        image_size: 16,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// Training config matched to [`tiny_dataset`].
pub fn tiny_config(steps: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        steps,
        queue_capacity: 24,
        eval_every: 0,
        augmentation: AugmentationSpec { out_size: 16, ..AugmentationSpec::default() },
        model: ModelConfig { embed_dim: 8, conv_widths: vec![4, 8], ..ModelConfig::default() },
        ..TrainConfig::default()
    }
}

pub fn tiny_encoders(seed: u64) -> EncoderSet {
    init_encoders(
        &ArchConfig {
            image_size: 8,
            channels: 3,
            attr_dim: 5,
            embed_dim: 6,
            k: 2,
            conv_widths: vec![3, 4],
            ..ArchConfig::default()
        },
        seed,
    )
    .unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.normal(0.0, 1.0))
}

pub fn unit_rows(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let mut m = random_matrix(rows, cols, rng);
    for mut r in m.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    m
}

pub fn flat_params<T: Parameters>(m: &T) -> Vec<f64> {
    m.params().iter().flat_map(|(_, v)| v.iter().copied().collect::<Vec<_>>()).collect()
}

/// Adds `delta` to the `index`-th scalar of the flattened parameter list.
pub fn nudge<T: Parameters>(m: &mut T, index: usize, delta: f64) {
    let mut i = index;
    for (_, mut v) in m.params_mut() {
        if i < v.len() {
            *v.iter_mut().nth(i).unwrap() += delta;
            return;
        }
        i -= v.len();
    }
    panic!("parameter index {index} out of range");
}

pub const FD_STEP: f64 = 1e-3;
pub const FD_RTOL: f64 = 1e-4;

pub struct FdSummary {
    pub checked: usize,
    pub worst_rel: f64,
}

/// Central finite-difference check of `analytic` against `eval(i, δ)`, the
/// objective with scalar `i` shifted by `δ`.
///
/// Indices are drawn at random. An entry is skipped when halving the step
/// changes the estimate (a rectifier or max kink lies within the stencil)
/// or when both gradients are numerically zero. Sampling stops after
/// `want` entries have been checked.
pub fn fd_check(
    analytic: &[f64],
    mut eval: impl FnMut(usize, f64) -> f64,
    want: usize,
    rng: &mut Rng,
) -> FdSummary {
    let mut checked = 0;
    let mut worst_rel: f64 = 0.0;
    let order = rng.permutation(analytic.len());
    for &i in &order {
        if checked == want {
            break;
        }
        let fd = |eval: &mut dyn FnMut(usize, f64) -> f64, h: f64| (eval(i, h) - eval(i, -h)) / (2.0 * h);
        let n1 = fd(&mut eval, FD_STEP);
        let n2 = fd(&mut eval, FD_STEP / 2.0);
        let a = analytic[i];
        let scale = a.abs().max(n1.abs());
        if scale < 1e-7 || (n1 - n2).abs() > 1e-5 * scale.max(1e-3) {
            continue;
        }
        let rel = (a - n1).abs() / scale;
        assert!(
            rel <= FD_RTOL,
            "entry {i}: analytic {a:.10e} vs numeric {n1:.10e} (relative error {rel:.2e})"
        );
        worst_rel = worst_rel.max(rel);
        checked += 1;
    }
    FdSummary { checked, worst_rel }
}
