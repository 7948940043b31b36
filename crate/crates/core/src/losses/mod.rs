//! Objective terms and their gradients.
//!
//! Similarities are cosines of unit rows; distances are `d = −s`. Every
//! loss returns its value together with the gradient w.r.t. the unit
//! inputs it consumed; callers chain through the normalization.

mod mask;
mod queue;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use mask::{mask_attributes, masked_count, MaskResult};
pub use queue::NegativeQueue;

use crate::data::ClassId;
use crate::error::{DcenError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ZslLoss {
    pub value: f64,
    pub d_visual: Array2<f64>,
    pub d_semantic: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentLoss {
    pub value: f64,
    /// Class id of the most similar wrong class, per sample.
    pub hardest_negatives: Vec<ClassId>,
    pub pos_sim_mean: f64,
    pub d_visual: Array2<f64>,
    /// Gradient w.r.t. the class-embedding rows.
    pub d_classes: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLoss {
    pub value: f64,
    pub d_pred: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminationLoss {
    pub value: f64,
    pub d_query: Array2<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_sa: f64,
    pub l_sp: f64,
    pub l_id: f64,
    pub l_total: f64,
    pub pos_sim_mean: f64,
    pub hardest_negatives: Vec<ClassId>,
}

fn check_aligned(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(DcenError::DimensionMismatch(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    if a.nrows() == 0 {
        return Err(DcenError::InvalidArgument(format!("{what}: empty batch")));
    }
    Ok(())
}

/// Mean of `−cos(v_i, a_i)` over row-aligned unit vectors.
pub fn zsl_loss(visual_units: &Array2<f64>, semantic_units: &Array2<f64>) -> Result<ZslLoss> {
    check_aligned(visual_units, semantic_units, "zsl loss")?;
    let b = visual_units.nrows() as f64;
    let sims = (visual_units * semantic_units).sum_axis(Axis(1));
    Ok(ZslLoss {
        value: -sims.sum() / b,
        d_visual: semantic_units * (-1.0 / b),
        d_semantic: visual_units * (-1.0 / b),
    })
}

/// Cross-modal triplet over classes: mean of `d(v_i, c_{y_i}) − min_{k≠y_i} d(v_i, c_k)`.
///
/// `class_units` row `j` is the embedding of `class_ids[j]`. With
/// `hinge_margin = Some(m)` each term becomes `max(0, term + m)`. Ties in
/// the hardest negative go to the lowest row index.
pub fn semantic_alignment_loss(
    visual_units: &Array2<f64>,
    labels: &[ClassId],
    class_units: &Array2<f64>,
    class_ids: &[ClassId],
    hinge_margin: Option<f64>,
) -> Result<AlignmentLoss> {
    let n = visual_units.nrows();
    if n == 0 || labels.len() != n {
        return Err(DcenError::DimensionMismatch(format!(
            "alignment loss: {n} embeddings for {} labels",
            labels.len()
        )));
    }
    if class_units.nrows() != class_ids.len() || class_units.ncols() != visual_units.ncols() {
        return Err(DcenError::DimensionMismatch(format!(
            "alignment loss: class table {:?} for {} ids and {}-dim embeddings",
            class_units.dim(),
            class_ids.len(),
            visual_units.ncols()
        )));
    }
    if class_ids.len() < 2 {
        return Err(DcenError::InvalidArgument("alignment loss needs at least two classes".into()));
    }
    let b = n as f64;
    let sims = visual_units.dot(&class_units.t());
    let mut value = 0.0;
    let mut pos_sum = 0.0;
    let mut hardest = Vec::with_capacity(n);
    let mut d_visual = Array2::zeros(visual_units.dim());
    let mut d_classes = Array2::zeros(class_units.dim());
    for (i, &label) in labels.iter().enumerate() {
        let pos = class_ids.iter().position(|&c| c == label).ok_or(DcenError::UnknownClass(label))?;
        let mut neg = usize::MAX;
        for k in 0..class_ids.len() {
            if k != pos && (neg == usize::MAX || sims[[i, k]] > sims[[i, neg]]) {
                neg = k;
            }
        }
        hardest.push(class_ids[neg]);
        let s_pos = sims[[i, pos]];
        pos_sum += s_pos;
        let term = -s_pos + sims[[i, neg]];
        let (contrib, active) = match hinge_margin {
            None => (term, true),
            Some(m) => ((term + m).max(0.0), term + m > 0.0),
        };
        value += contrib;
        if active {
            let v = visual_units.row(i);
            let mut dv = d_visual.row_mut(i);
            dv.scaled_add(-1.0 / b, &class_units.row(pos));
            dv.scaled_add(1.0 / b, &class_units.row(neg));
            d_classes.row_mut(pos).scaled_add(-1.0 / b, &v);
            d_classes.row_mut(neg).scaled_add(1.0 / b, &v);
        }
    }
    Ok(AlignmentLoss {
        value: value / b,
        hardest_negatives: hardest,
        pos_sim_mean: pos_sum / b,
        d_visual,
        d_classes,
    })
}

/// Mean over rows of `‖pred − target‖₂` (not squared). The gradient at a
/// zero residual is taken as zero.
pub fn attribute_prediction_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<PredictionLoss> {
    check_aligned(pred, target, "attribute prediction loss")?;
    let b = pred.nrows() as f64;
    let resid = pred - target;
    let norms: Array1<f64> = resid.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let scale = norms.mapv(|n| if n > 0.0 { 1.0 / (n * b) } else { 0.0 });
    Ok(PredictionLoss { value: norms.sum() / b, d_pred: resid * &scale.insert_axis(Axis(1)) })
}

/// InfoNCE with the key as class 0 and every queue row as a negative.
/// Keys and negatives carry no gradient.
pub fn instance_discrimination_loss(
    query_units: &Array2<f64>,
    key_units: &Array2<f64>,
    negatives: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<DiscriminationLoss> {
    if !(tau > 0.0) {
        return Err(DcenError::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    check_aligned(query_units, key_units, "instance discrimination loss")?;
    if negatives.nrows() > 0 && negatives.ncols() != query_units.ncols() {
        return Err(DcenError::DimensionMismatch(format!(
            "queue rows are {}-dim, queries {}-dim",
            negatives.ncols(),
            query_units.ncols()
        )));
    }
    let b = query_units.nrows() as f64;
    let neg_logits = query_units.dot(&negatives.t()) / tau;
    let mut value = 0.0;
    let mut d_query = Array2::zeros(query_units.dim());
    for i in 0..query_units.nrows() {
        let pos = query_units.row(i).dot(&key_units.row(i)) / tau;
        let row = neg_logits.row(i);
        let max = row.iter().fold(pos, |m, &v| m.max(v));
        let e_pos = (pos - max).exp();
        let e_neg = row.mapv(|v| (v - max).exp());
        let z = e_pos + e_neg.sum();
        value += z.ln() + max - pos;
        let mut dq = d_query.row_mut(i);
        dq.scaled_add((e_pos / z - 1.0) / (tau * b), &key_units.row(i));
        let w = e_neg / (z * tau * b);
        dq += &w.dot(&negatives);
    }
    Ok(DiscriminationLoss { value: value / b, d_query })
}

/// `λ1·l_id + l_sa + λ2·l_sp`.
pub fn total_loss(l_sa: f64, l_sp: f64, l_id: f64, lambda1: f64, lambda2: f64) -> Result<f64> {
    if lambda1 < 0.0 || lambda2 < 0.0 || lambda1.is_nan() || lambda2.is_nan() {
        return Err(DcenError::InvalidArgument(format!(
            "loss weights must be non-negative, got λ1={lambda1}, λ2={lambda2}"
        )));
    }
    Ok(lambda1 * l_id + l_sa + lambda2 * l_sp)
}
