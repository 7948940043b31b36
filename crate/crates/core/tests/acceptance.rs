//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line and then
//! fails its test if any check in it failed.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use dcen::augment::{apply_patch_permutation, horizontal_flip, patch_swap, rotate, AugmentationSpec, OpKind};
use dcen::data::{generate_synthetic, load_dataset_dir, write_dataset, ClassId, SynthConfig};
use dcen::encoders::VisualBatch;
use dcen::evaluator::{evaluate_gzsl, harmonic_mean};
use dcen::image::Image;
use dcen::losses::{
    attribute_prediction_loss, instance_discrimination_loss, semantic_alignment_loss, NegativeQueue,
};
use dcen::nn::zeros_like;
use dcen::rng::Rng;
use dcen::sweep::{run_sweep, SweepSpec, CSV_HEADER};
use dcen::trainer::{train, TrainConfig};
use ndarray::Array2;

/// Writes to the process stdout directly so the line shows even when the
/// test harness captures output.
fn verdict(line: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

/// Runs `body`, prints the criterion's verdict line and re-raises a failure.
fn criterion(id: u32, title: &str, body: impl FnOnce() -> String) {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(detail) => verdict(format!("criterion {id} PASS: {title} ({detail})")),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(format!("criterion {id} FAIL: {title} ({msg})"));
            resume_unwind(e);
        }
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// ---------------------------------------------------------------------------

/// Published (MCA_u, MCA_s, H) triples.
const PUBLISHED: &[(f64, f64, f64)] = &[
    (56.3, 72.8, 63.5),
    (62.4, 75.9, 68.5),
    (62.5, 78.3, 69.5),
    (63.5, 77.7, 69.9),
    (63.8, 78.4, 70.4),
    (62.4, 81.7, 70.8),
    (37.5, 61.6, 46.7),
    (43.7, 39.8, 41.7),
];

#[test]
fn criterion_1_metric_arithmetic() {
    criterion(1, "harmonic mean reproduces published H within 0.05", || {
        let misses: Vec<String> = PUBLISHED
            .iter()
            .filter_map(|&(u, s, h)| {
                let got = harmonic_mean(u, s);
                ((got - h).abs() > 0.05).then(|| format!("{u}/{s}: got {got:.4}, published {h}"))
            })
            .collect();
        assert!(
            misses.is_empty(),
            "{} of {} triples off: {}",
            misses.len(),
            PUBLISHED.len(),
            misses.join("; ")
        );
        format!("{} triples", PUBLISHED.len())
    });
}

// ---------------------------------------------------------------------------

const LOSS_TOL: f64 = 1e-6;

/// Softmax cross-entropy with the positive at logit 0, in plain f64.
fn brute_infonce(q: &Array2<f64>, k: &Array2<f64>, negs: &Array2<f64>, tau: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..q.nrows() {
        let dot = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| -> f64 {
            a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
        };
        let mut logits = vec![dot(q.row(i), k.row(i)) / tau];
        logits.extend(negs.rows().into_iter().map(|n| dot(q.row(i), n) / tau));
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += log_z - logits[0];
    }
    total / q.nrows() as f64
}

/// Triplet term with distances `‖v − c‖²/2` and every negative visited.
fn brute_alignment(v: &Array2<f64>, labels: &[usize], c: &Array2<f64>, margin: Option<f64>) -> f64 {
    let dist =
        |i: usize, k: usize| (0..v.ncols()).map(|d| (v[[i, d]] - c[[k, d]]).powi(2)).sum::<f64>() / 2.0;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let mut nearest_neg = f64::INFINITY;
        for k in 0..c.nrows() {
            if k != y {
                nearest_neg = nearest_neg.min(dist(i, k));
            }
        }
        let term = dist(i, y) - nearest_neg;
        total += match margin {
            None => term,
            Some(m) => (term + m).max(0.0),
        };
    }
    total / labels.len() as f64
}

#[test]
fn criterion_2_loss_oracles() {
    criterion(2, "losses match brute-force oracles within 1e-6", || {
        let start = Instant::now();
        let mut rng = Rng::seed_from(2);
        let mut worst_id: f64 = 0.0;
        for _ in 0..100 {
            let b = 1 + rng.below(8);
            let qn = rng.below(65);
            let dim = 2 + rng.below(15);
            let tau = rng.uniform_range(0.05, 1.0);
            let q = unit_rows(b, dim, &mut rng);
            let k = unit_rows(b, dim, &mut rng);
            let negs = unit_rows(qn, dim, &mut rng);
            let got = instance_discrimination_loss(&q, &k, negs.view(), tau).unwrap().value;
            let want = brute_infonce(&q, &k, &negs, tau);
            let err = (got - want).abs();
            assert!(err <= LOSS_TOL, "discrimination loss {got} vs oracle {want}");
            worst_id = worst_id.max(err);
        }
        let mut worst_sa: f64 = 0.0;
        for case in 0..100 {
            let n = 1 + rng.below(10);
            let classes = 2 + rng.below(10);
            let dim = 2 + rng.below(15);
            let v = unit_rows(n, dim, &mut rng);
            let c = unit_rows(classes, dim, &mut rng);
            let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
            let ids: Vec<ClassId> = (0..classes as u32).map(ClassId).collect();
            let label_ids: Vec<ClassId> = labels.iter().map(|&l| ids[l]).collect();
            let margin = (case % 2 == 1).then(|| rng.uniform_range(0.0, 1.0));
            let got = semantic_alignment_loss(&v, &label_ids, &c, &ids, margin).unwrap().value;
            let want = brute_alignment(&v, &labels, &c, margin);
            let err = (got - want).abs();
            assert!(err <= LOSS_TOL, "alignment loss {got} vs oracle {want} (margin {margin:?})");
            worst_sa = worst_sa.max(err);
        }
        let elapsed = start.elapsed();
        assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
        format!("worst |Δ| discrimination {worst_id:.1e}, alignment {worst_sa:.1e}, {elapsed:.2?}")
    });
}

// ---------------------------------------------------------------------------

const FD_WANT: usize = 12;

fn image_batch(n: usize, size: usize, rng: &mut Rng) -> VisualBatch {
    let imgs: Vec<Image> = (0..n).map(|_| Image::from_fn(size, size, 3, |_| rng.uniform())).collect();
    VisualBatch::from_images(&imgs.iter().collect::<Vec<_>>()).unwrap()
}

fn shifted(m: &Array2<f64>, i: usize, d: f64) -> Array2<f64> {
    let mut out = m.clone();
    out.as_slice_mut().unwrap()[i] += d;
    out
}

#[test]
fn criterion_3_gradient_suite() {
    criterion(3, "central finite differences agree at 1e-4 relative", || {
        let start = Instant::now();
        let mut rng = Rng::seed_from(3);
        let enc = tiny_encoders(30);
        let mut results: Vec<(&str, FdSummary)> = Vec::new();

        let batch = image_batch(4, 8, &mut rng);
        let w = random_matrix(4, 6, &mut rng);
        let (_, cache) = enc.visual.clone().forward_train(&batch).unwrap();
        let mut g = zeros_like(&enc.visual);
        enc.visual.backward(&cache, &w, &mut g);
        results.push((
            "f",
            fd_check(
                &flat_params(&g),
                |i, d| {
                    let mut m = enc.visual.clone();
                    nudge(&mut m, i, d);
                    (&w * &m.forward_keys(&batch).unwrap()).sum()
                },
                FD_WANT,
                &mut rng,
            ),
        ));

        let attrs = Array2::from_shape_fn((6, 5), |_| rng.uniform());
        let w = random_matrix(6, 6, &mut rng);
        let (_, cache) = enc.semantic.clone().forward_train(&attrs).unwrap();
        let mut g = zeros_like(&enc.semantic);
        enc.semantic.backward(&cache, &w, &mut g);
        results.push((
            "h",
            fd_check(
                &flat_params(&g),
                |i, d| {
                    let mut m = enc.semantic.clone();
                    nudge(&mut m, i, d);
                    (&w * &m.forward_train(&attrs).unwrap().0).sum()
                },
                FD_WANT,
                &mut rng,
            ),
        ));

        let v = random_matrix(5, 6, &mut rng);
        let a = random_matrix(5, 6, &mut rng);
        let w = random_matrix(5, 5, &mut rng);
        let (_, cache) = enc.decoder.clone().forward_train(&v, &a).unwrap();
        let mut g = zeros_like(&enc.decoder);
        enc.decoder.backward(&cache, &w, &mut g);
        results.push((
            "decoder",
            fd_check(
                &flat_params(&g),
                |i, d| {
                    let mut m = enc.decoder.clone();
                    nudge(&mut m, i, d);
                    (&w * &m.forward_train(&v, &a).unwrap().0).sum()
                },
                FD_WANT,
                &mut rng,
            ),
        ));

        let vis = unit_rows(6, 5, &mut rng);
        let cls = unit_rows(4, 5, &mut rng);
        let ids: Vec<ClassId> = (0..4).map(ClassId).collect();
        let labels: Vec<ClassId> = (0..6).map(|i| ClassId(i % 4)).collect();
        let sa = semantic_alignment_loss(&vis, &labels, &cls, &ids, None).unwrap();
        results.push((
            "alignment",
            fd_check(
                sa.d_visual.as_slice().unwrap(),
                |i, d| {
                    semantic_alignment_loss(&shifted(&vis, i, d), &labels, &cls, &ids, None).unwrap().value
                },
                FD_WANT,
                &mut rng,
            ),
        ));

        let pred = random_matrix(5, 4, &mut rng);
        let target = random_matrix(5, 4, &mut rng);
        let sp = attribute_prediction_loss(&pred, &target).unwrap();
        results.push((
            "prediction",
            fd_check(
                sp.d_pred.as_slice().unwrap(),
                |i, d| attribute_prediction_loss(&shifted(&pred, i, d), &target).unwrap().value,
                FD_WANT,
                &mut rng,
            ),
        ));

        let q = unit_rows(4, 6, &mut rng);
        let k = unit_rows(4, 6, &mut rng);
        let negs = unit_rows(10, 6, &mut rng);
        let id = instance_discrimination_loss(&q, &k, negs.view(), 0.2).unwrap();
        results.push((
            "discrimination",
            fd_check(
                id.d_query.as_slice().unwrap(),
                |i, d| instance_discrimination_loss(&shifted(&q, i, d), &k, negs.view(), 0.2).unwrap().value,
                FD_WANT,
                &mut rng,
            ),
        ));

        let mut parts = Vec::new();
        for (name, s) in &results {
            assert!(s.checked >= 10, "{name}: only {} checkable entries", s.checked);
            parts.push(format!("{name} {}@{:.0e}", s.checked, s.worst_rel));
        }
        let elapsed = start.elapsed();
        assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
        format!("{}, {elapsed:.2?}", parts.join(", "))
    });
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_4_momentum_contract() {
    criterion(4, "key encoder gap contracts by m per update", || {
        for m in [0.0, 0.9, 0.999, 1.0] {
            let mut enc = tiny_encoders(40);
            for i in [0, 3, 17, 40] {
                nudge(&mut enc.key, i, 0.3);
            }
            let frozen_f = enc.visual.clone();
            let start_key = enc.key.clone();
            let mut gap = enc.key_gap();
            assert!(gap > 0.0);
            for update in 1..=5 {
                enc.momentum_update(m).unwrap();
                assert!(enc.visual == frozen_f, "f changed");
                let next = enc.key_gap();
                if m == 0.0 {
                    assert!(flat_params(&enc.key) == flat_params(&enc.visual), "m=0 must copy f exactly");
                } else if m == 1.0 {
                    assert!(enc.key == start_key, "m=1 must leave g untouched");
                } else {
                    let rel = (next - m * gap).abs() / (m * gap);
                    assert!(rel <= 1e-6, "m={m} update {update}: gap {next} vs {}", m * gap);
                }
                gap = next;
            }
        }
        "m in {0, 0.9, 0.999, 1}, 5 updates each".into()
    });
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_5_queue_contract() {
    criterion(5, "queue equals list FIFO and obeys min(n*B, Q)", || {
        let mut rng = Rng::seed_from(5);
        let trials = 300;
        for _ in 0..trials {
            let cap = 1 + rng.below(64);
            let dim = 1 + rng.below(4);
            let b = 1 + rng.below(16);
            let n = rng.below(20);
            let mut q = NegativeQueue::new(cap, dim).unwrap();
            let mut oracle: Vec<Vec<f64>> = Vec::new();
            for step in 1..=n {
                // Mostly fixed batch size, occasionally ragged.
                let rows = if rng.bernoulli(0.2) { 1 + rng.below(16) } else { b };
                let keys = random_matrix(rows, dim, &mut rng);
                q.enqueue(&keys).unwrap();
                oracle.extend(keys.rows().into_iter().map(|r| r.to_vec()));
                if oracle.len() > cap {
                    oracle.drain(..oracle.len() - cap);
                }
                let got: Vec<Vec<f64>> = q.ordered_rows().rows().into_iter().map(|r| r.to_vec()).collect();
                assert!(got == oracle, "contents diverge at enqueue {step}");
            }
            let mut fixed = NegativeQueue::new(cap, dim).unwrap();
            for _ in 0..n {
                fixed.enqueue(&Array2::zeros((b, dim))).unwrap();
            }
            assert_eq!(fixed.len(), (n * b).min(cap), "length law n={n} B={b} Q={cap}");
        }
        format!("{trials} random sequences")
    });
}

// ---------------------------------------------------------------------------

fn pixel_multiset(img: &Image) -> Vec<u64> {
    let mut v: Vec<u64> = img.data().iter().map(|x| x.to_bits()).collect();
    v.sort_unstable();
    v
}

#[test]
fn criterion_6_augmentation_properties() {
    criterion(6, "augmentation invariants and firing rates", || {
        let start = Instant::now();
        let mut rng = Rng::seed_from(6);
        for _ in 0..50 {
            let size = 6 + rng.below(20);
            let img = Image::from_fn(size, size, 3, |_| rng.uniform());
            let grid = 2 + rng.below(3);
            let swapped = patch_swap(&img, grid, &mut rng).unwrap();
            assert!(
                pixel_multiset(&swapped) == pixel_multiset(&img),
                "patch swap changed the pixel multiset"
            );
            assert!(horizontal_flip(&horizontal_flip(&img)) == img, "flip is not an involution");
            let id: Vec<usize> = (0..grid * grid).collect();
            if size.is_multiple_of(grid) {
                assert!(
                    apply_patch_permutation(&img, grid, &id).unwrap() == img,
                    "identity permutation moved pixels"
                );
            }
            assert!(
                rotate(&img, 0.0, 30.0).unwrap().max_abs_diff(&img) <= 1e-12,
                "zero rotation moved pixels"
            );
        }

        // Per-op firing counts over n draws of the default pipeline.
        let n = 1000;
        let spec = AugmentationSpec::default();
        let img = Image::from_fn(32, 32, 3, |_| rng.uniform());
        let mut fired: BTreeMap<OpKind, usize> = BTreeMap::new();
        for _ in 0..n {
            let (_, ops) = spec.apply(&img, &mut rng).unwrap();
            for op in ops {
                *fired.entry(op).or_default() += 1;
            }
        }
        let rate = |k: OpKind| 100.0 * *fired.get(&k).unwrap_or(&0) as f64 / n as f64;
        let (flip, swap) = (rate(OpKind::Flip), rate(OpKind::Swap));
        assert!((flip - 50.0).abs() <= 4.0, "flip fired {flip}%");
        assert!((swap - 20.0).abs() <= 4.0, "swap fired {swap}%");
        let elapsed = start.elapsed();
        assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
        format!("flip {flip:.1}%, swap {swap:.1}%, {elapsed:.2?}")
    });
}

// ---------------------------------------------------------------------------

const CHANCE: f64 = 100.0 / 12.0;

#[test]
fn criterion_7_end_to_end_synthetic() {
    criterion(7, "end-to-end synthetic GZSL with the committed config", || {
        let root = repo_root();
        let synth: SynthConfig = dcen::config::load(Some(&root.join("configs/e2e/synth.toml")), &[]).unwrap();
        let cfg: TrainConfig = dcen::config::load(Some(&root.join("configs/e2e/train.toml")), &[]).unwrap();
        assert_eq!((synth.num_seen, synth.num_unseen, cfg.steps, cfg.batch_size), (8, 4, 500, 32));

        // Same path as `dcen synth` followed by `dcen train`.
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&generate_synthetic(&synth).unwrap(), dir.path()).unwrap();
        let ds = load_dataset_dir(dir.path()).unwrap();

        let start = Instant::now();
        let out = train(&ds, &cfg, None).unwrap();
        let report = evaluate_gzsl(&out.state.encoders, &ds).unwrap();
        let elapsed = start.elapsed();

        let fixture_path = root.join("crates/core/tests/fixtures/e2e_report.json");
        let fixture = std::fs::read_to_string(&fixture_path).unwrap();
        let rerun = evaluate_gzsl(&out.state.encoders, &ds).unwrap();

        let checks = [
            ("runtime < 5 min", elapsed < Duration::from_secs(300)),
            ("report reproduces fixture bit-for-bit", report.to_json() == fixture.trim_end()),
            ("rerun identical", rerun == report),
            ("MCA_u >= 2x chance", report.mca_u >= 2.0 * CHANCE - 0.05),
            ("H > 0", report.h > 0.0),
        ];
        let summary = format!(
            "MCA_u {:.2}, MCA_s {:.2}, H {:.2}, {elapsed:.1?}; {}",
            report.mca_u,
            report.mca_s,
            report.h,
            checks
                .iter()
                .map(|(name, ok)| format!("{name}: {}", if *ok { "ok" } else { "failed" }))
                .collect::<Vec<_>>()
                .join(", ")
        );
        assert!(checks.iter().all(|c| c.1), "{summary}");
        summary
    });
}

// ---------------------------------------------------------------------------

/// Sweep base: the committed pipeline shrunk so that a whole grid runs in
/// seconds.
fn sweep_base() -> TrainConfig {
    TrainConfig { steps: 20, ..tiny_config(20) }
}

fn run_committed_sweep(name: &str, ds: &dcen::data::GzslDataset, out: &Path) -> (String, String) {
    let spec = SweepSpec::from_file(&repo_root().join(format!("configs/sweeps/{name}.toml"))).unwrap();
    let outcome = run_sweep(&spec, &sweep_base(), ds, out).unwrap();
    let csv = std::fs::read_to_string(&outcome.csv_path).unwrap();
    let svg = std::fs::read_to_string(&outcome.plot_path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len() - 1, spec.values.len() * spec.repeats, "{name}: wrong row count");
    let values: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let expected: Vec<f64> = spec.values.iter().flat_map(|&v| vec![v; spec.repeats]).collect();
    assert_eq!(values, expected, "{name}: rows out of grid order");
    assert!(svg.starts_with("<svg") && svg.contains("</svg>"), "{name}: plot is not an SVG document");
    (csv, svg)
}

#[test]
fn criterion_8_ablation_harness() {
    criterion(8, "lambda1 and sigma sweeps are complete and deterministic", || {
        let ds = tiny_dataset(8);
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        for name in ["lambda1", "sigma"] {
            let first = run_committed_sweep(name, &ds, &dir.path().join(format!("{name}_a")));
            let second = run_committed_sweep(name, &ds, &dir.path().join(format!("{name}_b")));
            assert!(first == second, "{name}: reruns differ");
            rows.push(format!("{name} {} rows", first.0.lines().count() - 1));
        }
        rows.join(", ")
    });
}
