use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{NamedView, NamedViewMut, Parameters};
use crate::rng::Rng;

/// `y = x Wᵀ + b`, rows are samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// He-normal weights, zero bias.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        Linear {
            weight: Array2::from_shape_fn((out_dim, in_dim), |_| rng.normal(0.0, std)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates into `grad`, returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

impl Parameters for Linear {
    fn params(&self) -> Vec<NamedView<'_>> {
        vec![("weight".into(), self.weight.view().into_dyn()), ("bias".into(), self.bias.view().into_dyn())]
    }

    fn params_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        vec![
            ("weight".into(), self.weight.view_mut().into_dyn()),
            ("bias".into(), self.bias.view_mut().into_dyn()),
        ]
    }
}
