//! Minimal layer kit with hand-written backward passes.
//!
//! Layers keep no autograd tape: `forward_train` returns the activations a
//! later `backward` call needs, and `backward` accumulates parameter
//! gradients into a caller-owned gradient struct of the same type.

mod activation;
mod conv;
mod linear;
mod norm;

use ndarray::{ArrayViewD, ArrayViewMutD};

pub use activation::{
    l2_normalize_rows, l2_normalize_rows_backward, relu, relu_backward, sigmoid, sigmoid_backward, Activation,
};
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::{BatchNorm, BatchStats, BnCache};

pub type NamedView<'a> = (String, ArrayViewD<'a, f64>);
pub type NamedViewMut<'a> = (String, ArrayViewMutD<'a, f64>);

/// Uniform access to trainable parameters and non-trainable buffers
/// (normalization running statistics), in a stable order.
pub trait Parameters {
    fn params(&self) -> Vec<NamedView<'_>>;
    fn params_mut(&mut self) -> Vec<NamedViewMut<'_>>;

    fn buffers(&self) -> Vec<NamedView<'_>> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        Vec::new()
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, v)| v.len()).sum()
    }
}

/// Prefix every name in `items` with `prefix.`.
pub fn prefixed<T>(prefix: &str, items: Vec<(String, T)>) -> Vec<(String, T)> {
    items.into_iter().map(|(name, v)| (format!("{prefix}.{name}"), v)).collect()
}

/// Clone of `module` with every parameter and buffer set to zero; used as
/// a gradient accumulator.
pub fn zeros_like<T: Parameters + Clone>(module: &T) -> T {
    let mut z = module.clone();
    for (_, mut p) in z.params_mut() {
        p.fill(0.0);
    }
    for (_, mut b) in z.buffers_mut() {
        b.fill(0.0);
    }
    z
}

/// Euclidean norm over all parameters of `a - b`. Both must be congruent.
pub fn param_distance<T: Parameters>(a: &T, b: &T) -> f64 {
    a.params()
        .iter()
        .zip(b.params().iter())
        .map(|((_, x), (_, y))| x.iter().zip(y.iter()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

pub fn params_equal<T: Parameters>(a: &T, b: &T) -> bool {
    let (pa, pb) = (a.params(), b.params());
    pa.len() == pb.len()
        && pa.iter().zip(pb.iter()).all(|((na, x), (nb, y))| {
            na == nb
                && x.shape() == y.shape()
                && x.iter().zip(y.iter()).all(|(u, v)| u.to_bits() == v.to_bits())
        })
}
