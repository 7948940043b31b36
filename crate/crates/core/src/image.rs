use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

/// Image tensor, height × width × channels, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image { data: Array3::zeros((height, width, channels)) }
    }

    pub fn from_array(data: Array3<f64>) -> Self {
        Image { data }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl FnMut((usize, usize, usize)) -> f64,
    ) -> Self {
        Image { data: Array3::from_shape_fn((height, width, channels), f) }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[[y, x, c]]
    }

    pub fn clamp01(mut self) -> Self {
        self.data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        self
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data.iter().zip(other.data.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Bilinear sample at continuous coordinates `(y, x)`, clamping to the
    /// border.
    pub fn sample_clamped(&self, y: f64, x: f64, c: usize) -> f64 {
        let (h, w) = (self.height(), self.width());
        let y = y.clamp(0.0, (h - 1) as f64);
        let x = x.clamp(0.0, (w - 1) as f64);
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let fy = y - y0 as f64;
        let fx = x - x0 as f64;
        let top = self.data[[y0, x0, c]] * (1.0 - fx) + self.data[[y0, x1, c]] * fx;
        let bottom = self.data[[y1, x0, c]] * (1.0 - fx) + self.data[[y1, x1, c]] * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Resample the sub-rectangle `(top, left, crop_h, crop_w)` (continuous
    /// coordinates) to `out_h × out_w` with half-pixel-centre bilinear
    /// sampling. A full-frame rectangle at the native size is an exact copy.
    pub fn resample_rect(
        &self,
        top: f64,
        left: f64,
        crop_h: f64,
        crop_w: f64,
        out_h: usize,
        out_w: usize,
    ) -> Image {
        let channels = self.channels();
        let sy = crop_h / out_h as f64;
        let sx = crop_w / out_w as f64;
        let data = Array3::from_shape_fn((out_h, out_w, channels), |(i, j, c)| {
            let y = top + (i as f64 + 0.5) * sy - 0.5;
            let x = left + (j as f64 + 0.5) * sx - 0.5;
            self.sample_clamped(y, x, c)
        });
        Image { data }
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> Image {
        if out_h == self.height() && out_w == self.width() {
            return self.clone();
        }
        self.resample_rect(0.0, 0.0, self.height() as f64, self.width() as f64, out_h, out_w)
    }
}
