//! Nearest-prototype GZSL inference and class-balanced metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{AttributeMatrix, ClassId, GzslDataset, Sample, SampleData, Split};
use crate::encoders::{EncoderSet, VisualBatch, VisualEncoder};
use crate::error::{DcenError, Result};
use crate::image::Image;

const EVAL_BATCH: usize = 128;

/// Index of the most similar class row for every visual row; ties go to
/// the lowest index.
pub fn nearest_class(visual_units: &Array2<f64>, class_units: &Array2<f64>) -> Vec<usize> {
    let sims = visual_units.dot(&class_units.t());
    sims.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &s) in row.iter().enumerate() {
                if s > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Build an encoder input batch from dataset samples. Images whose size
/// differs from the encoder's input size are resized.
pub fn sample_batch(encoder: &VisualEncoder, samples: &[&Sample]) -> Result<VisualBatch> {
    match samples.first().map(|s| &s.data) {
        None => Err(DcenError::InvalidArgument("empty sample batch".into())),
        Some(SampleData::Features(_)) => {
            let rows = samples
                .iter()
                .map(|s| match &s.data {
                    SampleData::Features(v) => Ok(v),
                    SampleData::Image(_) => Err(DcenError::DimensionMismatch(
                        "mixed images and feature vectors in one batch".into(),
                    )),
                })
                .collect::<Result<Vec<_>>>()?;
            VisualBatch::from_features(&rows)
        }
        Some(SampleData::Image(_)) => {
            let size = match encoder {
                VisualEncoder::Conv(net) => net.input_size,
                VisualEncoder::Mlp(_) => {
                    return Err(DcenError::DimensionMismatch("feature encoder given images".into()))
                }
            };
            let resized = samples
                .iter()
                .map(|s| match &s.data {
                    SampleData::Image(img) if img.height() == size && img.width() == size => Ok(img.clone()),
                    SampleData::Image(img) => Ok(img.resize(size, size)),
                    SampleData::Features(_) => Err(DcenError::DimensionMismatch(
                        "mixed images and feature vectors in one batch".into(),
                    )),
                })
                .collect::<Result<Vec<Image>>>()?;
            let refs: Vec<&Image> = resized.iter().collect();
            VisualBatch::from_images(&refs)
        }
    }
}

/// Eval-mode unit embeddings of the given samples, in order.
pub fn embed_samples(enc: &EncoderSet, samples: &[&Sample]) -> Result<Array2<f64>> {
    let mut parts = Vec::new();
    for chunk in samples.chunks(EVAL_BATCH) {
        let batch = sample_batch(&enc.visual, chunk)?;
        parts.push(enc.visual_forward(&batch)?.unit);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| DcenError::InvalidArgument(e.to_string()))
}

/// Eval-mode unit embeddings of every attribute row (unmasked).
pub fn embed_classes(enc: &EncoderSet, attributes: &AttributeMatrix) -> Result<Array2<f64>> {
    if attributes.attr_dim() != enc.semantic.attr_dim() {
        return Err(DcenError::DimensionMismatch(format!(
            "attributes have {} columns, encoder expects {}",
            attributes.attr_dim(),
            enc.semantic.attr_dim()
        )));
    }
    Ok(enc.semantic_forward(attributes.values())?.unit)
}

/// Predicted class per image over every class in `attributes`.
pub fn predict(enc: &EncoderSet, attributes: &AttributeMatrix, batch: &VisualBatch) -> Result<Vec<ClassId>> {
    let classes = embed_classes(enc, attributes)?;
    let visual = enc.visual_forward(batch)?.unit;
    Ok(nearest_class(&visual, &classes).into_iter().map(|k| attributes.class_ids()[k]).collect())
}

/// Mean over `class_set` of per-class top-1 accuracy, in percent. Classes
/// without samples are left out of the mean. Also returns the per-class
/// accuracies that entered it.
pub fn mean_class_accuracy(
    preds: &[ClassId],
    labels: &[ClassId],
    class_set: &BTreeSet<ClassId>,
) -> Result<(f64, BTreeMap<ClassId, f64>)> {
    if class_set.is_empty() {
        return Err(DcenError::InvalidArgument("empty class set".into()));
    }
    if preds.len() != labels.len() {
        return Err(DcenError::DimensionMismatch(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut tally: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
    for (p, l) in preds.iter().zip(labels) {
        if !class_set.contains(l) {
            return Err(DcenError::UnknownClass(*l));
        }
        let e = tally.entry(*l).or_default();
        e.1 += 1;
        if p == l {
            e.0 += 1;
        }
    }
    if tally.is_empty() {
        return Err(DcenError::EmptySplit("no labelled samples".into()));
    }
    let per_class: BTreeMap<ClassId, f64> =
        tally.into_iter().map(|(c, (hit, n))| (c, 100.0 * hit as f64 / n as f64)).collect();
    let mca = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok((mca, per_class))
}

/// `2uv/(u+v)`, or 0 when `u + v = 0`.
pub fn harmonic_mean(mca_u: f64, mca_s: f64) -> f64 {
    if mca_u + mca_s == 0.0 {
        0.0
    } else {
        2.0 * mca_u * mca_s / (mca_u + mca_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GzslReport {
    pub mca_u: f64,
    pub mca_s: f64,
    pub h: f64,
    pub per_class_acc: BTreeMap<ClassId, f64>,
    pub num_test_seen: usize,
    pub num_test_unseen: usize,
}

impl GzslReport {
    pub fn from_parts(
        mca_u: f64,
        mca_s: f64,
        per_class_acc: BTreeMap<ClassId, f64>,
        num_test_seen: usize,
        num_test_unseen: usize,
    ) -> Self {
        GzslReport {
            mca_u,
            mca_s,
            h: harmonic_mean(mca_u, mca_s),
            per_class_acc,
            num_test_seen,
            num_test_unseen,
        }
    }

    /// Fixed-width table with `MCA_u`, `MCA_s`, `H` columns.
    pub fn to_table(&self, label: &str) -> String {
        let width = label.len().max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$} | {:>6} | {:>6} | {:>6}", "Method", "MCA_u", "MCA_s", "H");
        let _ = writeln!(out, "{}-+--------+--------+-------", "-".repeat(width));
        let _ =
            writeln!(out, "{:<width$} | {:>6.1} | {:>6.1} | {:>6.1}", label, self.mca_u, self.mca_s, self.h);
        out
    }

    /// Summary CSV followed by per-class rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,class_id,value\n");
        let _ = writeln!(out, "mca_u,,{}", self.mca_u);
        let _ = writeln!(out, "mca_s,,{}", self.mca_s);
        let _ = writeln!(out, "h,,{}", self.h);
        let _ = writeln!(out, "num_test_seen,,{}", self.num_test_seen);
        let _ = writeln!(out, "num_test_unseen,,{}", self.num_test_unseen);
        for (c, acc) in &self.per_class_acc {
            let _ = writeln!(out, "class_acc,{c},{acc}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DcenError::parse("report json", e.to_string()))
    }
}

fn split_predictions(
    enc: &EncoderSet,
    ds: &GzslDataset,
    class_units: &Array2<f64>,
    split: Split,
) -> Result<(Vec<ClassId>, Vec<ClassId>)> {
    let samples: Vec<&Sample> = ds.samples.iter().filter(|s| s.split == split).collect();
    if samples.is_empty() {
        return Err(DcenError::EmptySplit(split.to_string()));
    }
    let visual = embed_samples(enc, &samples)?;
    let preds =
        nearest_class(&visual, class_units).into_iter().map(|k| ds.attributes.class_ids()[k]).collect();
    Ok((preds, samples.iter().map(|s| s.label).collect()))
}

/// GZSL protocol: prediction over the union of seen and unseen classes;
/// `MCA_s` on `test_seen`, `MCA_u` on `test_unseen`.
pub fn evaluate_gzsl(enc: &EncoderSet, ds: &GzslDataset) -> Result<GzslReport> {
    let class_units = embed_classes(enc, &ds.attributes)?;
    let (ps, ls) = split_predictions(enc, ds, &class_units, Split::TestSeen)?;
    let (pu, lu) = split_predictions(enc, ds, &class_units, Split::TestUnseen)?;
    let (mca_s, mut per_class) = mean_class_accuracy(&ps, &ls, &ds.seen_classes)?;
    let (mca_u, per_unseen) = mean_class_accuracy(&pu, &lu, &ds.unseen_classes)?;
    per_class.extend(per_unseen);
    Ok(GzslReport::from_parts(mca_u, mca_s, per_class, ls.len(), lu.len()))
}

/// MCA on the validation split, searched over all classes.
pub fn evaluate_val(enc: &EncoderSet, ds: &GzslDataset) -> Result<f64> {
    let class_units = embed_classes(enc, &ds.attributes)?;
    let (p, l) = split_predictions(enc, ds, &class_units, Split::Val)?;
    Ok(mean_class_accuracy(&p, &l, &ds.seen_classes)?.0)
}

/// Unit embeddings of every test sample with labels, for external
/// visualization.
pub fn embedding_dump(enc: &EncoderSet, ds: &GzslDataset) -> Result<(Array2<f64>, Vec<ClassId>)> {
    let samples: Vec<&Sample> =
        ds.samples.iter().filter(|s| matches!(s.split, Split::TestSeen | Split::TestUnseen)).collect();
    if samples.is_empty() {
        return Err(DcenError::EmptySplit("test".into()));
    }
    let units = embed_samples(enc, &samples)?;
    Ok((units, samples.iter().map(|s| s.label).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn harmonic_identities() {
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 55.0), 0.0);
        assert!((harmonic_mean(40.0, 40.0) - 40.0).abs() < 1e-12);
        assert!((harmonic_mean(62.4, 75.9) - 68.5).abs() < 0.05);
    }

    #[test]
    fn class_balanced_accuracy() {
        let set: BTreeSet<ClassId> = [ClassId(0), ClassId(1)].into_iter().collect();
        let mut labels = vec![ClassId(0); 10];
        labels.extend([ClassId(1); 2]);
        let preds = vec![ClassId(0); 12];
        let (mca, per) = mean_class_accuracy(&preds, &labels, &set).unwrap();
        assert_eq!(mca, 50.0);
        assert_eq!(per[&ClassId(1)], 0.0);
        assert!(mean_class_accuracy(&preds, &labels, &BTreeSet::new()).is_err());
    }

    #[test]
    fn zero_sample_classes_are_excluded() {
        let set: BTreeSet<ClassId> = [ClassId(0), ClassId(1), ClassId(2)].into_iter().collect();
        let (mca, _) = mean_class_accuracy(&[ClassId(0)], &[ClassId(0)], &set).unwrap();
        assert_eq!(mca, 100.0);
    }

    #[test]
    fn nearest_class_exact_match_and_ties() {
        let classes =
            arr2(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]);
        let v = arr2(&[[0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 0.0]]);
        assert_eq!(nearest_class(&v, &classes), vec![3, 0]);
    }

    #[test]
    fn table_has_three_metric_columns() {
        let r = GzslReport::from_parts(10.0, 30.0, BTreeMap::new(), 5, 6);
        let t = r.to_table("DCEN");
        assert!(t.lines().next().unwrap().contains("MCA_u |  MCA_s |      H"));
        assert!(t.contains("  15.0"));
        assert_eq!(GzslReport::from_json(&r.to_json()).unwrap(), r);
    }
}
