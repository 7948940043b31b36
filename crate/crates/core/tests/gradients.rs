//! Central finite-difference checks of every hand-written backward pass.

mod common;

use common::*;
use dcen::data::ClassId;
use dcen::encoders::VisualBatch;
use dcen::image::Image;
use dcen::losses::{
    attribute_prediction_loss, instance_discrimination_loss, semantic_alignment_loss, zsl_loss,
};
use dcen::nn::{l2_normalize_rows, l2_normalize_rows_backward, zeros_like};
use dcen::rng::Rng;
use ndarray::Array2;

const WANT: usize = 12;

fn images(n: usize, size: usize, rng: &mut Rng) -> VisualBatch {
    let imgs: Vec<Image> = (0..n).map(|_| Image::from_fn(size, size, 3, |_| rng.uniform())).collect();
    VisualBatch::from_images(&imgs.iter().collect::<Vec<_>>()).unwrap()
}

fn weighted_sum(w: &Array2<f64>, y: &Array2<f64>) -> f64 {
    (w * y).sum()
}

fn assert_enough(what: &str, s: FdSummary) {
    assert!(s.checked >= 10, "{what}: only {} entries were checkable", s.checked);
}

#[test]
fn visual_encoder_parameters() {
    let mut rng = Rng::seed_from(11);
    let enc = tiny_encoders(1);
    let batch = images(4, 8, &mut rng);
    let w = random_matrix(4, 6, &mut rng);

    let mut f = enc.visual.clone();
    let (_, cache) = f.forward_train(&batch).unwrap();
    let mut grad = zeros_like(&enc.visual);
    enc.visual.backward(&cache, &w, &mut grad);
    let analytic = flat_params(&grad);

    let s = fd_check(
        &analytic,
        |i, d| {
            let mut m = enc.visual.clone();
            nudge(&mut m, i, d);
            weighted_sum(&w, &m.forward_keys(&batch).unwrap())
        },
        WANT,
        &mut rng,
    );
    assert_enough("f", s);
}

#[test]
fn semantic_encoder_parameters() {
    let mut rng = Rng::seed_from(12);
    let enc = tiny_encoders(2);
    let attrs = Array2::from_shape_fn((6, 5), |_| rng.uniform());
    let w = random_matrix(6, 6, &mut rng);

    let mut h = enc.semantic.clone();
    let (_, cache) = h.forward_train(&attrs).unwrap();
    let mut grad = zeros_like(&enc.semantic);
    enc.semantic.backward(&cache, &w, &mut grad);

    let s = fd_check(
        &flat_params(&grad),
        |i, d| {
            let mut m = enc.semantic.clone();
            nudge(&mut m, i, d);
            weighted_sum(&w, &m.forward_train(&attrs).unwrap().0)
        },
        WANT,
        &mut rng,
    );
    assert_enough("h", s);
}

#[test]
fn decoder_parameters_and_inputs() {
    let mut rng = Rng::seed_from(13);
    let enc = tiny_encoders(3);
    let v = random_matrix(5, 6, &mut rng);
    let a = random_matrix(5, 6, &mut rng);
    let w = random_matrix(5, 5, &mut rng);

    let mut dec = enc.decoder.clone();
    let (_, cache) = dec.forward_train(&v, &a).unwrap();
    let mut grad = zeros_like(&enc.decoder);
    let (dv, da) = enc.decoder.backward(&cache, &w, &mut grad);
    let objective = |v: &Array2<f64>, a: &Array2<f64>, m: &dcen::encoders::AttributeDecoder| {
        weighted_sum(&w, &m.clone().forward_train(v, a).unwrap().0)
    };

    let s = fd_check(
        &flat_params(&grad),
        |i, d| {
            let mut m = enc.decoder.clone();
            nudge(&mut m, i, d);
            objective(&v, &a, &m)
        },
        WANT,
        &mut rng,
    );
    assert_enough("decoder params", s);

    let s = fd_check(
        dv.as_slice().unwrap(),
        |i, d| {
            let mut v2 = v.clone();
            v2.as_slice_mut().unwrap()[i] += d;
            objective(&v2, &a, &enc.decoder)
        },
        WANT,
        &mut rng,
    );
    assert_enough("decoder visual input", s);

    let s = fd_check(
        da.as_slice().unwrap(),
        |i, d| {
            let mut a2 = a.clone();
            a2.as_slice_mut().unwrap()[i] += d;
            objective(&v, &a2, &enc.decoder)
        },
        WANT,
        &mut rng,
    );
    assert_enough("decoder semantic input", s);
}

fn perturbed(m: &Array2<f64>, i: usize, d: f64) -> Array2<f64> {
    let mut out = m.clone();
    out.as_slice_mut().unwrap()[i] += d;
    out
}

#[test]
fn alignment_loss_inputs() {
    let mut rng = Rng::seed_from(14);
    let v = unit_rows(6, 5, &mut rng);
    let c = unit_rows(4, 5, &mut rng);
    let ids: Vec<ClassId> = (0..4).map(ClassId).collect();
    let labels: Vec<ClassId> = (0..6).map(|i| ClassId(i % 4)).collect();
    for margin in [None, Some(0.5)] {
        let loss = semantic_alignment_loss(&v, &labels, &c, &ids, margin).unwrap();
        let s = fd_check(
            loss.d_visual.as_slice().unwrap(),
            |i, d| semantic_alignment_loss(&perturbed(&v, i, d), &labels, &c, &ids, margin).unwrap().value,
            WANT,
            &mut rng,
        );
        assert_enough("alignment visual", s);
        let s = fd_check(
            loss.d_classes.as_slice().unwrap(),
            |i, d| semantic_alignment_loss(&v, &labels, &perturbed(&c, i, d), &ids, margin).unwrap().value,
            WANT,
            &mut rng,
        );
        assert_enough("alignment classes", s);
    }
}

#[test]
fn prediction_loss_inputs() {
    let mut rng = Rng::seed_from(15);
    let pred = random_matrix(5, 4, &mut rng);
    let target = random_matrix(5, 4, &mut rng);
    let loss = attribute_prediction_loss(&pred, &target).unwrap();
    let s = fd_check(
        loss.d_pred.as_slice().unwrap(),
        |i, d| attribute_prediction_loss(&perturbed(&pred, i, d), &target).unwrap().value,
        WANT,
        &mut rng,
    );
    assert_enough("prediction", s);
}

#[test]
fn discrimination_loss_inputs() {
    let mut rng = Rng::seed_from(16);
    let q = unit_rows(4, 6, &mut rng);
    let k = unit_rows(4, 6, &mut rng);
    let negs = unit_rows(10, 6, &mut rng);
    let loss = instance_discrimination_loss(&q, &k, negs.view(), 0.2).unwrap();
    let s = fd_check(
        loss.d_query.as_slice().unwrap(),
        |i, d| instance_discrimination_loss(&perturbed(&q, i, d), &k, negs.view(), 0.2).unwrap().value,
        WANT,
        &mut rng,
    );
    assert_enough("discrimination", s);
}

#[test]
fn zsl_loss_inputs() {
    let mut rng = Rng::seed_from(17);
    let v = unit_rows(4, 5, &mut rng);
    let a = unit_rows(4, 5, &mut rng);
    let loss = zsl_loss(&v, &a).unwrap();
    let s = fd_check(
        loss.d_visual.as_slice().unwrap(),
        |i, d| zsl_loss(&perturbed(&v, i, d), &a).unwrap().value,
        WANT,
        &mut rng,
    );
    assert_enough("zsl", s);
}

/// Encoder, row normalization and triplet loss chained as in a train step.
#[test]
fn visual_encoder_through_normalization_and_alignment() {
    let mut rng = Rng::seed_from(18);
    let enc = tiny_encoders(4);
    let batch = images(4, 8, &mut rng);
    let classes = unit_rows(3, 6, &mut rng);
    let ids: Vec<ClassId> = (0..3).map(ClassId).collect();
    let labels = vec![ClassId(0), ClassId(1), ClassId(2), ClassId(0)];
    let objective = |raw: &Array2<f64>| {
        let (u, _) = l2_normalize_rows(raw);
        semantic_alignment_loss(&u, &labels, &classes, &ids, None).unwrap()
    };

    let mut f = enc.visual.clone();
    let (raw, cache) = f.forward_train(&batch).unwrap();
    let (u, norms) = l2_normalize_rows(&raw);
    let d_raw = l2_normalize_rows_backward(&u, &norms, &objective(&raw).d_visual);
    let mut grad = zeros_like(&enc.visual);
    enc.visual.backward(&cache, &d_raw, &mut grad);

    let s = fd_check(
        &flat_params(&grad),
        |i, d| {
            let mut m = enc.visual.clone();
            nudge(&mut m, i, d);
            objective(&m.forward_keys(&batch).unwrap()).value
        },
        WANT,
        &mut rng,
    );
    assert_enough("f through loss", s);
}
