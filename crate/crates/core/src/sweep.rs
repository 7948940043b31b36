//! One-parameter ablation sweeps: train and evaluate one model per
//! `(value, repeat)` cell, log a CSV row per cell and plot mean `H`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::PRESET_NAMES;
use crate::data::GzslDataset;
use crate::error::{DcenError, Result};
use crate::evaluator::{evaluate_gzsl, GzslReport};
use crate::rng::derive_seed;
use crate::trainer::{train, TrainConfig};

pub const CSV_HEADER: &str = "param,value,repeat,mca_u,mca_s,h";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "lambda1")]
    Lambda1,
    #[serde(rename = "lambda2")]
    Lambda2,
    #[serde(rename = "sigma")]
    Sigma,
    /// Depth of the semantic encoder and decoder.
    #[serde(rename = "K", alias = "k")]
    Depth,
    /// Index into the augmentation preset table.
    #[serde(rename = "augmentation_row")]
    AugmentationRow,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda1 => "lambda1",
            SweepParam::Lambda2 => "lambda2",
            SweepParam::Sigma => "sigma",
            SweepParam::Depth => "K",
            SweepParam::AugmentationRow => "augmentation_row",
        }
    }

    fn is_integral(self) -> bool {
        matches!(self, SweepParam::Depth | SweepParam::AugmentationRow)
    }

    /// Copy of `base` with this parameter set to `value`.
    pub fn apply(self, base: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        match self {
            SweepParam::Lambda1 => cfg.lambda1 = value,
            SweepParam::Lambda2 => cfg.lambda2 = value,
            SweepParam::Sigma => cfg.sigma = value,
            SweepParam::Depth => cfg.k = value as usize,
            SweepParam::AugmentationRow => {
                cfg.augmentation_preset = Some(PRESET_NAMES[value as usize].to_string());
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub repeats: usize,
    /// Training config the sweep starts from, relative to the spec file.
    #[serde(default)]
    pub base_config: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl SweepSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DcenError::io(path, e))?;
        let spec: SweepSpec = toml::from_str(&text)
            .map_err(|e| DcenError::parse(path.display().to_string(), e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DcenError::Config(m));
        if self.values.is_empty() {
            return bad("sweep values must be non-empty".into());
        }
        if self.repeats == 0 {
            return bad("sweep repeats must be >= 1".into());
        }
        for &v in &self.values {
            if !v.is_finite() {
                return bad(format!("sweep value {v} is not finite"));
            }
            if self.param.is_integral() && (v.fract() != 0.0 || v < 0.0) {
                return bad(format!("{} values must be non-negative integers (got {v})", self.param.name()));
            }
        }
        if self.param == SweepParam::AugmentationRow {
            if let Some(&v) = self.values.iter().find(|&&v| v as usize >= PRESET_NAMES.len()) {
                return bad(format!(
                    "augmentation_row {v} out of range; rows are 0..{}",
                    PRESET_NAMES.len() - 1
                ));
            }
        }
        Ok(())
    }

    /// Seed of one cell, a hash of the base seed and the cell coordinates,
    /// so any cell can be rerun in isolation.
    pub fn cell_seed(&self, base_seed: u64, value: f64, repeat: usize) -> u64 {
        derive_seed(
            base_seed,
            &[
                b"sweep",
                self.param.name().as_bytes(),
                &value.to_bits().to_le_bytes(),
                &(repeat as u64).to_le_bytes(),
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub repeat: usize,
    pub report: GzslReport,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub csv_path: PathBuf,
    pub plot_path: PathBuf,
}

fn csv_row(param: SweepParam, row: &SweepRow) -> String {
    format!(
        "{},{},{},{},{},{}",
        param.name(),
        row.value,
        row.repeat,
        row.report.mca_u,
        row.report.mca_s,
        row.report.h
    )
}

/// Runs every cell in value-major order. Each completed cell is appended
/// to `sweep_<param>.csv` and flushed before the next starts, so a failed
/// sweep leaves its finished cells on disk.
pub fn run_sweep(
    spec: &SweepSpec,
    base: &TrainConfig,
    ds: &GzslDataset,
    out_dir: &Path,
) -> Result<SweepOutcome> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| DcenError::io(out_dir, e))?;
    let csv_path = out_dir.join(format!("sweep_{}.csv", spec.param.name()));
    let plot_path = out_dir.join(format!("sweep_{}.svg", spec.param.name()));
    let mut csv = fs::File::create(&csv_path).map_err(|e| DcenError::io(&csv_path, e))?;
    writeln!(csv, "{CSV_HEADER}").map_err(|e| DcenError::io(&csv_path, e))?;

    let mut rows = Vec::new();
    for &value in &spec.values {
        for repeat in 0..spec.repeats {
            let mut cfg = spec.param.apply(base, value)?;
            cfg.seed = spec.cell_seed(base.seed, value, repeat);
            cfg.eval_every = 0;
            log::info!("sweep {}={value} repeat {repeat}", spec.param.name());
            let outcome = train(ds, &cfg, None)?;
            let row = SweepRow { value, repeat, report: evaluate_gzsl(&outcome.state.encoders, ds)? };
            writeln!(csv, "{}", csv_row(spec.param, &row)).map_err(|e| DcenError::io(&csv_path, e))?;
            csv.flush().map_err(|e| DcenError::io(&csv_path, e))?;
            rows.push(row);
        }
    }
    let svg = plot_mean_h(spec.param, &mean_h(&rows));
    fs::write(&plot_path, svg).map_err(|e| DcenError::io(&plot_path, e))?;
    Ok(SweepOutcome { rows, csv_path, plot_path })
}

/// Mean `H` per distinct value, in first-appearance order.
pub fn mean_h(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    let mut acc: Vec<(f64, f64, usize)> = Vec::new();
    for r in rows {
        match acc.iter_mut().find(|(v, _, _)| *v == r.value) {
            Some(slot) => {
                slot.1 += r.report.h;
                slot.2 += 1;
            }
            None => acc.push((r.value, r.report.h, 1)),
        }
    }
    acc.into_iter().map(|(v, s, n)| (v, s / n as f64)).collect()
}

/// Static SVG line plot of mean `H` against the swept value.
pub fn plot_mean_h(param: SweepParam, points: &[(f64, f64)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 50.0;
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;

    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (xmin, xmax) = match (sorted.first(), sorted.last()) {
        (Some(a), Some(b)) if b.0 > a.0 => (a.0, b.0),
        (Some(a), _) => (a.0 - 0.5, a.0 + 0.5),
        _ => (0.0, 1.0),
    };
    let ymax = sorted.iter().map(|p| p.1).fold(0.0f64, f64::max);
    let ymax = if ymax > 0.0 { (ymax / 10.0).ceil() * 10.0 } else { 10.0 };
    let sx = |x: f64| LEFT + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| TOP + ph - y / ymax * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ =
        writeln!(s, r#"<path d="M{LEFT} {TOP} V{} H{}" fill="none" stroke="black"/>"#, TOP + ph, LEFT + pw);
    for i in 0..=5 {
        let y = ymax * i as f64 / 5.0;
        let (x0, ty) = (LEFT - 4.0, sy(y));
        let _ = writeln!(
            s,
            r#"<line x1="{x0}" y1="{ty:.1}" x2="{LEFT}" y2="{ty:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{y}</text>"#,
            LEFT - 6.0,
            ty + 4.0
        );
    }
    for &(x, _) in &sorted {
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1}" x2="{0:.1}" y2="{2}" stroke="black"/><text x="{0:.1}" y="{3}" text-anchor="middle">{x}</text>"#,
            sx(x),
            TOP + ph,
            TOP + ph + 4.0,
            TOP + ph + 16.0
        );
    }
    let line: Vec<String> = sorted.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        line.join(" ")
    );
    for &(x, y) in &sorted {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#, sx(x), sy(y));
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        param.name()
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">mean H</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(param: SweepParam, values: Vec<f64>) -> SweepSpec {
        SweepSpec { param, values, repeats: 1, base_config: None }
    }

    #[test]
    fn spec_parses_from_toml() {
        let s: SweepSpec = toml::from_str("param = \"K\"\nvalues = [1, 2]\nrepeats = 3\n").unwrap();
        assert_eq!(s.param, SweepParam::Depth);
        assert_eq!(s.values, vec![1.0, 2.0]);
        s.validate().unwrap();
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(spec(SweepParam::Lambda1, vec![]).validate().is_err());
        assert!(spec(SweepParam::Depth, vec![1.5]).validate().is_err());
        assert!(spec(SweepParam::AugmentationRow, vec![99.0]).validate().is_err());
        let mut s = spec(SweepParam::Sigma, vec![0.0]);
        s.repeats = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn cell_seeds_are_distinct_and_stable() {
        let s = spec(SweepParam::Lambda1, vec![0.0, 0.1]);
        let a = s.cell_seed(1, 0.0, 0);
        assert_eq!(a, s.cell_seed(1, 0.0, 0));
        assert_ne!(a, s.cell_seed(1, 0.0, 1));
        assert_ne!(a, s.cell_seed(1, 0.1, 0));
        assert_ne!(a, spec(SweepParam::Sigma, vec![0.0]).cell_seed(1, 0.0, 0));
    }

    #[test]
    fn mean_h_groups_by_value() {
        let row = |value, h| SweepRow {
            value,
            repeat: 0,
            report: GzslReport::from_parts(h, h, Default::default(), 0, 0),
        };
        let m = mean_h(&[row(1.0, 10.0), row(0.0, 4.0), row(1.0, 20.0)]);
        assert_eq!(m, vec![(1.0, 15.0), (0.0, 4.0)]);
        let svg = plot_mean_h(SweepParam::Lambda1, &m);
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }
}
