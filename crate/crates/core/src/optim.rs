//! SGD with momentum, L2 weight decay and cosine learning-rate decay.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::ArrayD;

use crate::nn::Parameters;

/// `lr0 · ½(1 + cos(π·t/T))`; constant `lr0` when `T = 0`.
pub fn cosine_lr(lr0: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = (step.min(total)) as f64 / total as f64;
    lr0 * 0.5 * (1.0 + (PI * t).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Velocity per parameter, keyed by `prefix.name`. Created on first use.
    velocity: BTreeMap<String, ArrayD<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, velocity: BTreeMap::new() }
    }

    /// `v ← μ·v + (g + wd·w)`, `w ← w − lr·v`.
    pub fn step<T: Parameters>(&mut self, prefix: &str, module: &mut T, grad: &T, lr: f64) {
        let grads = grad.params();
        for ((name, mut w), (_, g)) in module.params_mut().into_iter().zip(grads) {
            let key = format!("{prefix}.{name}");
            let v = self.velocity.entry(key).or_insert_with(|| ArrayD::zeros(w.shape()));
            let (mu, wd) = (self.momentum, self.weight_decay);
            ndarray::Zip::from(v.view_mut()).and(w.view_mut()).and(&g).for_each(|v, w, &g| {
                *v = mu * *v + g + wd * *w;
                *w -= lr * *v;
            });
        }
    }

    pub fn velocity(&self) -> &BTreeMap<String, ArrayD<f64>> {
        &self.velocity
    }

    pub fn set_velocity(&mut self, name: String, v: ArrayD<f64>) {
        self.velocity.insert(name, v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use crate::rng::Rng;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 100), 0.1);
        assert!(cosine_lr(0.1, 100, 100).abs() < 1e-15);
        assert!((cosine_lr(0.1, 50, 100) - 0.05).abs() < 1e-12);
        assert_eq!(cosine_lr(0.1, 7, 0), 0.1);
    }

    #[test]
    fn plain_sgd_step() {
        let mut rng = Rng::seed_from(0);
        let mut lin = Linear::new(2, 1, &mut rng);
        let before = lin.weight.clone();
        let mut g = lin.clone();
        g.weight.fill(1.0);
        g.bias.fill(0.0);
        let mut opt = Sgd::new(0.9, 0.0);
        opt.step("l", &mut lin, &g, 0.1);
        assert_eq!(lin.weight, &before - 0.1);
        opt.step("l", &mut lin, &g, 0.1);
        // Second step uses velocity 0.9 + 1.
        assert!((lin.weight[[0, 0]] - (before[[0, 0]] - 0.1 - 0.19)).abs() < 1e-12);
    }
}
