use ndarray::{Array1, Array2, Axis, Dimension, Zip};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

pub fn relu<D: Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU given its pre-activation input.
pub fn relu_backward<D: Dimension>(
    pre: &ndarray::Array<f64, D>,
    dy: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    dx
}

pub fn sigmoid(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Gradient through the sigmoid given its output.
pub fn sigmoid_backward(out: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    dy * &out.mapv(|s| s * (1.0 - s))
}

/// Row-wise L2 normalization. Returns the unit rows and the row norms.
///
/// A zero row maps to a zero row (its norm is floored at `1e-12`).
pub fn l2_normalize_rows(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12));
    let units = x / &norms.view().insert_axis(Axis(1));
    (units, norms)
}

/// `dx = (du - u (u·du)) / ‖x‖` per row.
pub fn l2_normalize_rows_backward(units: &Array2<f64>, norms: &Array1<f64>, du: &Array2<f64>) -> Array2<f64> {
    let dots = (units * du).sum_axis(Axis(1));
    let proj = units * &dots.insert_axis(Axis(1));
    (du - &proj) / norms.view().insert_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn normalized_rows_have_unit_norm() {
        let x = arr2(&[[3.0, 4.0], [-1.0, 1e-3], [10.0, 0.0]]);
        let (u, n) = l2_normalize_rows(&x);
        for r in u.rows() {
            assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-12);
        }
        assert_eq!(n[0], 5.0);
    }

    #[test]
    fn normalize_gradient_is_orthogonal_to_row() {
        let x = arr2(&[[1.0, 2.0, -0.5]]);
        let (u, n) = l2_normalize_rows(&x);
        let dx = l2_normalize_rows_backward(&u, &n, &arr2(&[[0.3, -1.0, 2.0]]));
        assert!(dx.row(0).dot(&x.row(0)).abs() < 1e-12);
    }
}
