//! Generated images carry their class attributes: a linear probe from mean
//! image statistics beats a probe fitted to shuffled attributes.

use dcen::data::{generate_synthetic, GzslDataset, SampleData, Split, SynthConfig};
use dcen::image::Image;
use nalgebra::DMatrix;

const RIDGE: f64 = 1e-3;

/// Frozen probe outcome on the default config with `noise_std = 0`:
/// (unseen error of the real probe, unseen error of the shuffled control).
const FROZEN: (f64, f64) = (9.758140472418317e-2, 2.336989999269982e-1);
const FROZEN_TOL: f64 = 1e-9;

/// Bias, per-channel means and per-channel means over a 3x3 grid.
fn mean_stats(img: &Image) -> Vec<f64> {
    let d = img.data();
    let (h, w, c) = d.dim();
    let mut f = vec![1.0];
    for ch in 0..c {
        f.push(d.slice(ndarray::s![.., .., ch]).mean().unwrap());
    }
    for gy in 0..3 {
        for gx in 0..3 {
            for ch in 0..c {
                let cell =
                    d.slice(ndarray::s![gy * h / 3..(gy + 1) * h / 3, gx * w / 3..(gx + 1) * w / 3, ch]);
                f.push(cell.mean().unwrap());
            }
        }
    }
    f
}

fn features(ds: &GzslDataset, split: Split) -> (DMatrix<f64>, Vec<usize>) {
    let rows: Vec<(Vec<f64>, usize)> = ds
        .samples
        .iter()
        .filter(|s| s.split == split)
        .map(|s| match &s.data {
            SampleData::Image(img) => (mean_stats(img), ds.attributes.index_of(s.label).unwrap()),
            SampleData::Features(_) => unreachable!("synthetic data is images"),
        })
        .collect();
    let p = rows[0].0.len();
    (DMatrix::from_fn(rows.len(), p, |i, j| rows[i].0[j]), rows.into_iter().map(|r| r.1).collect())
}

/// Mean squared error on unseen test images of a ridge probe fitted on seen
/// train images, with seen class `c` regressed onto attribute row `target(c)`.
fn unseen_error(ds: &GzslDataset, target: impl Fn(usize) -> usize) -> f64 {
    let a = ds.attributes.values();
    let dim = a.ncols();
    let (x, cls) = features(ds, Split::Train);
    let y = DMatrix::from_fn(x.nrows(), dim, |i, j| a[[target(cls[i]), j]]);
    let p = x.ncols();
    let gram = x.transpose() * &x + DMatrix::identity(p, p) * RIDGE;
    let w = gram.lu().solve(&(x.transpose() * y)).expect("ridge system is regular");
    let (xu, cu) = features(ds, Split::TestUnseen);
    let pred = xu * w;
    let mut err = 0.0;
    for (i, &c) in cu.iter().enumerate() {
        for j in 0..dim {
            err += (pred[(i, j)] - a[[c, j]]).powi(2);
        }
    }
    err / (cu.len() * dim) as f64
}

fn probe_errors() -> (f64, f64) {
    let ds = generate_synthetic(&SynthConfig { noise_std: 0.0, ..SynthConfig::default() }).unwrap();
    let seen: Vec<usize> = ds.seen_list().iter().map(|&c| ds.attributes.index_of(c).unwrap()).collect();
    // Rotating the seen rows by one gives every seen class another class's attributes.
    let shuffled = |c: usize| {
        let k = seen.iter().position(|&s| s == c).unwrap();
        seen[(k + 1) % seen.len()]
    };
    (unseen_error(&ds, |c| c), unseen_error(&ds, shuffled))
}

#[test]
fn probe_beats_shuffled_control() {
    let (probe, control) = probe_errors();
    println!("probe unseen error {probe:e}, shuffled control {control:e}");
    assert!(probe < control, "probe {probe} is not below control {control}");
}

#[test]
fn probe_errors_match_frozen_fixture() {
    let (probe, control) = probe_errors();
    assert!((probe - FROZEN.0).abs() <= FROZEN_TOL, "probe error drifted: {probe:e} vs {:e}", FROZEN.0);
    assert!((control - FROZEN.1).abs() <= FROZEN_TOL, "control error drifted: {control:e} vs {:e}", FROZEN.1);
}
