use ndarray::Array2;

use crate::error::{DcenError, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskResult {
    pub masked_attrs: Array2<f64>,
    /// `true` where the element was zeroed.
    pub mask: Array2<bool>,
    pub was_chosen: Vec<bool>,
}

/// Number of positions zeroed in a chosen row.
pub fn masked_count(sigma_pct: f64, attr_dim: usize) -> usize {
    (sigma_pct / 100.0 * attr_dim as f64).round() as usize
}

/// Each row is chosen with probability `choose_p`; a chosen row has
/// `round(σ/100·D)` positions, drawn without replacement, set to zero.
pub fn mask_attributes(
    attrs: &Array2<f64>,
    sigma_pct: f64,
    choose_p: f64,
    rng: &mut Rng,
) -> Result<MaskResult> {
    if !(0.0..=100.0).contains(&sigma_pct) {
        return Err(DcenError::InvalidArgument(format!("sigma {sigma_pct} outside [0, 100]")));
    }
    if !(0.0..=1.0).contains(&choose_p) {
        return Err(DcenError::InvalidArgument(format!("choose_p {choose_p} outside [0, 1]")));
    }
    let (rows, dim) = attrs.dim();
    let count = masked_count(sigma_pct, dim).min(dim);
    let mut masked_attrs = attrs.clone();
    let mut mask = Array2::from_elem((rows, dim), false);
    let mut was_chosen = Vec::with_capacity(rows);
    for r in 0..rows {
        let chosen = rng.bernoulli(choose_p);
        was_chosen.push(chosen);
        if chosen && count > 0 {
            for j in rng.sample_indices(dim, count) {
                mask[[r, j]] = true;
                masked_attrs[[r, j]] = 0.0;
            }
        }
    }
    Ok(MaskResult { masked_attrs, mask, was_chosen })
}
