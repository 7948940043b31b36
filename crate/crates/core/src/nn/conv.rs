use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use super::{NamedView, NamedViewMut, Parameters};
use crate::rng::Rng;

/// Square-kernel convolution without bias over CNHW tensors, computed as a
/// single GEMM on an im2col matrix of shape `(C_in·k·k, N·H_out·W_out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    /// `(C_out, C_in·k·k)`, column index `(c·k + ky)·k + kx`.
    pub weight: Array2<f64>,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        Conv2d {
            weight: Array2::from_shape_fn((out_channels, fan_in), |_| rng.normal(0.0, std)),
            in_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Array4<f64>) -> Array2<f64> {
        let (c_in, n, h, w) = x.dim();
        let (ho, wo) = self.output_size(h, w);
        let k = self.kernel;
        let cols_per_image = ho * wo;
        let mut cols = Array2::<f64>::zeros((c_in * k * k, n * cols_per_image));
        let xs = x.as_slice().expect("standard layout");
        let pad = self.padding as isize;
        {
            let out = cols.as_slice_mut().expect("standard layout");
            let width = n * cols_per_image;
            for c in 0..c_in {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (c * k + ky) * k + kx;
                        let dst = &mut out[row * width..(row + 1) * width];
                        for img in 0..n {
                            let base = (c * n + img) * h * w;
                            for oy in 0..ho {
                                let iy = (oy * self.stride + ky) as isize - pad;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let src_row = base + iy as usize * w;
                                let dst_row = img * cols_per_image + oy * wo;
                                for ox in 0..wo {
                                    let ix = (ox * self.stride + kx) as isize - pad;
                                    if ix >= 0 && ix < w as isize {
                                        dst[dst_row + ox] = xs[src_row + ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>, shape: (usize, usize, usize, usize)) -> Array4<f64> {
        let (c_in, n, h, w) = shape;
        let (ho, wo) = self.output_size(h, w);
        let k = self.kernel;
        let cols_per_image = ho * wo;
        let width = n * cols_per_image;
        let pad = self.padding as isize;
        let mut x = Array4::<f64>::zeros(shape);
        let cs = cols.as_slice().expect("standard layout");
        {
            let xs = x.as_slice_mut().expect("standard layout");
            for c in 0..c_in {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (c * k + ky) * k + kx;
                        let src = &cs[row * width..(row + 1) * width];
                        for img in 0..n {
                            let base = (c * n + img) * h * w;
                            for oy in 0..ho {
                                let iy = (oy * self.stride + ky) as isize - pad;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let dst_row = base + iy as usize * w;
                                let src_row = img * cols_per_image + oy * wo;
                                for ox in 0..wo {
                                    let ix = (ox * self.stride + kx) as isize - pad;
                                    if ix >= 0 && ix < w as isize {
                                        xs[dst_row + ix as usize] += src[src_row + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Returns the CNHW output and the im2col matrix needed by `backward`.
    pub fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, Array2<f64>) {
        let (_, n, h, w) = x.dim();
        let (ho, wo) = self.output_size(h, w);
        let cols = self.im2col(x);
        let y = self
            .weight
            .dot(&cols)
            .into_shape_with_order((self.out_channels(), n, ho, wo))
            .expect("conv output shape");
        (y, cols)
    }

    pub fn backward(
        &self,
        cols: &Array2<f64>,
        input_shape: (usize, usize, usize, usize),
        dy: &Array4<f64>,
        grad: &mut Conv2d,
    ) -> Array4<f64> {
        let co = self.out_channels();
        let p = dy.len() / co;
        let dy2 = dy.view().into_shape_with_order((co, p)).expect("contiguous gradient");
        grad.weight += &dy2.dot(&cols.t());
        let dcols = self.weight.t().dot(&dy2);
        self.col2im(&dcols, input_shape)
    }
}

impl Parameters for Conv2d {
    fn params(&self) -> Vec<NamedView<'_>> {
        vec![("weight".into(), self.weight.view().into_dyn())]
    }

    fn params_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        vec![("weight".into(), self.weight.view_mut().into_dyn())]
    }
}
