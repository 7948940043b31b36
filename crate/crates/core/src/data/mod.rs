//! Dataset representation for generalized zero-shot learning: per-class
//! attribute vectors, samples tagged with their split, and the seen/unseen
//! class partition.

mod io;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{DcenError, Result};
use crate::image::Image;

pub use io::{load_dataset, load_dataset_dir, write_dataset, ATTRIBUTES_FILE, DATA_DIR, SPLITS_FILE};
pub use synth::{generate_synthetic, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-class semantic descriptions. Row `i` belongs to `class_ids[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMatrix {
    values: Array2<f64>,
    class_ids: Vec<ClassId>,
}

impl AttributeMatrix {
    /// Checks shape, range and id uniqueness. Zero and duplicate rows are
    /// accepted here and surfaced by [`validate_dataset`].
    pub fn new(values: Array2<f64>, class_ids: Vec<ClassId>) -> Result<Self> {
        if values.nrows() != class_ids.len() {
            return Err(DcenError::DimensionMismatch(format!(
                "{} attribute rows for {} class ids",
                values.nrows(),
                class_ids.len()
            )));
        }
        if values.ncols() == 0 {
            return Err(DcenError::DimensionMismatch("attribute dimension is 0".into()));
        }
        let mut seen = HashSet::new();
        for id in &class_ids {
            if !seen.insert(*id) {
                return Err(DcenError::InvalidArgument(format!("duplicate class id {id}")));
            }
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DcenError::InvalidArgument(format!("attribute value {v} outside [0, 1]")));
        }
        Ok(AttributeMatrix { values, class_ids })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn attr_dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn index_of(&self, class: ClassId) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == class)
    }

    pub fn row(&self, class: ClassId) -> Option<ArrayView1<'_, f64>> {
        self.index_of(class).map(|i| self.values.row(i))
    }

    /// Rows for `classes`, in the given order.
    pub fn select(&self, classes: &[ClassId]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((classes.len(), self.attr_dim()));
        for (r, &class) in classes.iter().enumerate() {
            let row = self.row(class).ok_or(DcenError::UnknownClass(class))?;
            out.row_mut(r).assign(&row);
        }
        Ok(out)
    }

    fn issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        for (i, row) in self.values.rows().into_iter().enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                issues.push(format!("attribute row of class {} is all-zero", self.class_ids[i]));
            }
        }
        for i in 0..self.num_classes() {
            for j in (i + 1)..self.num_classes() {
                if self.values.row(i) == self.values.row(j) {
                    issues.push(format!(
                        "attribute rows of classes {} and {} are identical",
                        self.class_ids[i], self.class_ids[j]
                    ));
                }
            }
        }
        issues
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    TestSeen,
    TestUnseen,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::TestSeen => "test_seen",
            Split::TestUnseen => "test_unseen",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test_seen" => Some(Split::TestSeen),
            "test_unseen" => Some(Split::TestUnseen),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Either a raw image or a precomputed feature vector ("feature mode").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SampleData {
    Image(Image),
    Features(Array1<f64>),
}

impl SampleData {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            SampleData::Image(img) => vec![img.height(), img.width(), img.channels()],
            SampleData::Features(v) => vec![v.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub label: ClassId,
    pub split: Split,
    pub data: SampleData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Images { height: usize, width: usize, channels: usize },
    Features { dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GzslDataset {
    pub samples: Vec<Sample>,
    pub attributes: AttributeMatrix,
    pub seen_classes: BTreeSet<ClassId>,
    pub unseen_classes: BTreeSet<ClassId>,
}

impl GzslDataset {
    pub fn attr_dim(&self) -> usize {
        self.attributes.attr_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.attributes.num_classes()
    }

    /// Seen classes in ascending id order; the row order used for the
    /// seen-class attribute matrix during training.
    pub fn seen_list(&self) -> Vec<ClassId> {
        self.seen_classes.iter().copied().collect()
    }

    pub fn unseen_list(&self) -> Vec<ClassId> {
        self.unseen_classes.iter().copied().collect()
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        self.samples.iter().enumerate().filter(|(_, s)| s.split == split).map(|(i, _)| i).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }

    /// Shape of the sample payloads, taken from the first sample.
    pub fn input_kind(&self) -> Option<InputKind> {
        self.samples.first().map(|s| match &s.data {
            SampleData::Image(img) => {
                InputKind::Images { height: img.height(), width: img.width(), channels: img.channels() }
            }
            SampleData::Features(v) => InputKind::Features { dim: v.len() },
        })
    }

    pub fn validate(&self) -> ValidationReport {
        validate_dataset(self)
    }

    /// Fails with every violation listed if the dataset is not valid.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.ok {
            Ok(())
        } else {
            Err(DcenError::Validation(report.issues))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<String>,
}

impl ValidationReport {
    fn from_issues(issues: Vec<String>) -> Self {
        ValidationReport { ok: issues.is_empty(), issues }
    }
}

/// Lists every structural problem of `ds`; never fails.
pub fn validate_dataset(ds: &GzslDataset) -> ValidationReport {
    let mut issues = Vec::new();

    for class in ds.seen_classes.intersection(&ds.unseen_classes) {
        issues.push(format!("seen/unseen overlap: class {class}"));
    }
    for class in ds.seen_classes.iter().chain(ds.unseen_classes.iter()) {
        if ds.attributes.index_of(*class).is_none() {
            issues.push(format!("missing attributes for class {class}"));
        }
    }
    issues.extend(ds.attributes.issues());

    let mut ids = HashSet::new();
    let mut missing_attr: BTreeSet<ClassId> = BTreeSet::new();
    let mut split_violations: BTreeMap<(Split, ClassId), usize> = BTreeMap::new();
    let mut shapes: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut kinds = (0usize, 0usize);
    for sample in &ds.samples {
        if !ids.insert(sample.id) {
            issues.push(format!("duplicate sample id {}", sample.id));
        }
        if ds.attributes.index_of(sample.label).is_none() {
            missing_attr.insert(sample.label);
        }
        let allowed = match sample.split {
            Split::Train | Split::Val | Split::TestSeen => ds.seen_classes.contains(&sample.label),
            Split::TestUnseen => ds.unseen_classes.contains(&sample.label),
        };
        if !allowed {
            *split_violations.entry((sample.split, sample.label)).or_default() += 1;
        }
        match &sample.data {
            SampleData::Image(_) => kinds.0 += 1,
            SampleData::Features(_) => kinds.1 += 1,
        }
        *shapes.entry(sample.data.shape()).or_default() += 1;
        let finite_in_range = match &sample.data {
            SampleData::Image(img) => img.data().iter().all(|v| (0.0..=1.0).contains(v)),
            SampleData::Features(v) => v.iter().all(|x| x.is_finite()),
        };
        if !finite_in_range {
            issues.push(format!("sample {} has out-of-range values", sample.id));
        }
    }
    for class in missing_attr {
        issues.push(format!("missing attributes for sample label {class}"));
    }
    for ((split, class), n) in split_violations {
        let expected = if split == Split::TestUnseen { "unseen" } else { "seen" };
        issues.push(format!(
            "split violation: {n} {split} sample(s) labeled with class {class}, which is not {expected}"
        ));
    }
    if kinds.0 > 0 && kinds.1 > 0 {
        issues.push("mixed sample kinds: both images and feature vectors".into());
    }
    if shapes.len() > 1 {
        let listed: Vec<String> = shapes.keys().map(|s| format!("{s:?}")).collect();
        issues.push(format!("inconsistent sample shapes: {}", listed.join(", ")));
    }

    ValidationReport::from_issues(issues)
}
