use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{NamedView, NamedViewMut, Parameters};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Batch normalization over a channel-major matrix `(channels, items)`.
///
/// For dense layers pass `x.t()` of a `(batch, features)` matrix; for
/// convolutions pass the `(C, N·H·W)` reshaping of a CNHW tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchStats {
    mean: Array1<f64>,
    unbiased_var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    /// Batch statistics; updates the running averages (unbiased variance).
    pub fn forward_train(&mut self, x: ArrayView2<'_, f64>) -> (Array2<f64>, BnCache) {
        let (y, cache, stats) = self.normalize_batch(x);
        self.update_running(&stats);
        (y, cache)
    }

    /// Train-mode transform without touching the running averages.
    pub fn normalize_batch(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, BnCache, BatchStats) {
        let m = x.ncols() as f64;
        let mean = x.mean_axis(Axis(1)).expect("non-empty batch");
        let centered = &x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / m;
        let inv_std = var.mapv(|v| 1.0 / (v + EPS).sqrt());
        let xhat = &centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gamma.view().insert_axis(Axis(1)) + self.beta.view().insert_axis(Axis(1));
        let unbiased_var = if m > 1.0 { &var * (m / (m - 1.0)) } else { var };
        (y, BnCache { xhat, inv_std }, BatchStats { mean, unbiased_var })
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        self.running_mean = &self.running_mean * (1.0 - MOMENTUM) + &stats.mean * MOMENTUM;
        self.running_var = &self.running_var * (1.0 - MOMENTUM) + &stats.unbiased_var * MOMENTUM;
    }

    pub fn forward_eval(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let scale = &self.gamma / &self.running_var.mapv(|v| (v + EPS).sqrt());
        let shift = &self.beta - &(&self.running_mean * &scale);
        &x * &scale.view().insert_axis(Axis(1)) + shift.view().insert_axis(Axis(1))
    }

    /// Backward through the train-mode transform. `dy` is channel-major.
    pub fn backward(&self, cache: &BnCache, dy: ArrayView2<'_, f64>, grad: &mut BatchNorm) -> Array2<f64> {
        let m = dy.ncols() as f64;
        grad.gamma += &(&dy * &cache.xhat).sum_axis(Axis(1));
        grad.beta += &dy.sum_axis(Axis(1));
        let dxhat = &dy * &self.gamma.view().insert_axis(Axis(1));
        let sum_dxhat = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
        let inner = &dxhat * m - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat);
        inner * &(&cache.inv_std / m).insert_axis(Axis(1))
    }
}

impl Parameters for BatchNorm {
    fn params(&self) -> Vec<NamedView<'_>> {
        vec![("gamma".into(), self.gamma.view().into_dyn()), ("beta".into(), self.beta.view().into_dyn())]
    }

    fn params_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        vec![
            ("gamma".into(), self.gamma.view_mut().into_dyn()),
            ("beta".into(), self.beta.view_mut().into_dyn()),
        ]
    }

    fn buffers(&self) -> Vec<NamedView<'_>> {
        vec![
            ("running_mean".into(), self.running_mean.view().into_dyn()),
            ("running_var".into(), self.running_var.view().into_dyn()),
        ]
    }

    fn buffers_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        vec![
            ("running_mean".into(), self.running_mean.view_mut().into_dyn()),
            ("running_var".into(), self.running_var.view_mut().into_dyn()),
        ]
    }
}
