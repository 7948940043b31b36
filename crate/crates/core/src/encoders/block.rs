use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::nn::{
    prefixed, relu, relu_backward, sigmoid, sigmoid_backward, Activation, BatchNorm, BatchStats, BnCache,
    Linear, NamedView, NamedViewMut, Parameters,
};
use crate::rng::Rng;

/// Affine → optional batch norm → activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcBlock {
    pub linear: Linear,
    pub norm: Option<BatchNorm>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct FcCache {
    input: Array2<f64>,
    bn: Option<BnCache>,
    pre_act: Array2<f64>,
    output: Array2<f64>,
}

impl FcBlock {
    pub fn new(in_dim: usize, out_dim: usize, norm: bool, activation: Activation, rng: &mut Rng) -> Self {
        FcBlock {
            linear: Linear::new(in_dim, out_dim, rng),
            norm: norm.then(|| BatchNorm::new(out_dim)),
            activation,
        }
    }

    fn activate(&self, z: &Array2<f64>) -> Array2<f64> {
        match self.activation {
            Activation::Relu => relu(z),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z.clone(),
        }
    }

    pub fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, FcCache) {
        let (y, cache, stats) = self.forward_batch_stats(x);
        if let (Some(norm), Some(stats)) = (self.norm.as_mut(), stats) {
            norm.update_running(&stats);
        }
        (y, cache)
    }

    /// Train-mode transform that leaves the running statistics untouched.
    pub fn forward_batch_stats(&self, x: &Array2<f64>) -> (Array2<f64>, FcCache, Option<BatchStats>) {
        let z = self.linear.forward(x);
        let (pre_act, bn, stats) = match &self.norm {
            Some(norm) => {
                let (y, cache, stats) = norm.normalize_batch(z.t());
                (y.reversed_axes().as_standard_layout().to_owned(), Some(cache), Some(stats))
            }
            None => (z, None, None),
        };
        let output = self.activate(&pre_act);
        (output.clone(), FcCache { input: x.clone(), bn, pre_act, output }, stats)
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let z = self.linear.forward(x);
        let pre_act = match &self.norm {
            Some(norm) => norm.forward_eval(z.t()).reversed_axes().as_standard_layout().to_owned(),
            None => z,
        };
        self.activate(&pre_act)
    }

    pub fn backward(&self, cache: &FcCache, dy: &Array2<f64>, grad: &mut FcBlock) -> Array2<f64> {
        let d_pre = match self.activation {
            Activation::Relu => relu_backward(&cache.pre_act, dy),
            Activation::Sigmoid => sigmoid_backward(&cache.output, dy),
            Activation::Identity => dy.clone(),
        };
        let d_z = match (&self.norm, &cache.bn, grad.norm.as_mut()) {
            (Some(norm), Some(bn_cache), Some(norm_grad)) => {
                norm.backward(bn_cache, d_pre.t(), norm_grad).reversed_axes().as_standard_layout().to_owned()
            }
            _ => d_pre,
        };
        self.linear.backward(&cache.input, &d_z, &mut grad.linear)
    }
}

impl Parameters for FcBlock {
    fn params(&self) -> Vec<NamedView<'_>> {
        let mut out = prefixed("linear", self.linear.params());
        if let Some(norm) = &self.norm {
            out.extend(prefixed("norm", norm.params()));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        let mut out = prefixed("linear", self.linear.params_mut());
        if let Some(norm) = self.norm.as_mut() {
            out.extend(prefixed("norm", norm.params_mut()));
        }
        out
    }

    fn buffers(&self) -> Vec<NamedView<'_>> {
        self.norm.as_ref().map(|n| prefixed("norm", n.buffers())).unwrap_or_default()
    }

    fn buffers_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        self.norm.as_mut().map(|n| prefixed("norm", n.buffers_mut())).unwrap_or_default()
    }
}
