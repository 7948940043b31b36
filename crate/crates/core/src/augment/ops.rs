//! Individual image transformations. All ops map `[0, 1]` images to
//! `[0, 1]` images and leave the input untouched.

use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{DcenError, Result};
use crate::image::Image;
use crate::rng::Rng;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Crop rectangle in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub top: f64,
    pub left: f64,
    pub height: f64,
    pub width: f64,
}

/// Draw a crop window covering an area fraction in `scale` with aspect
/// ratio log-uniform in `[3/4, 4/3]`, narrowed to ratios that fit.
pub fn sample_crop_window(
    height: usize,
    width: usize,
    scale: (f64, f64),
    rng: &mut Rng,
) -> Result<CropWindow> {
    let (lo, hi) = scale;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(DcenError::InvalidArgument(format!(
            "crop scale must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"
        )));
    }
    let (h, w) = (height as f64, width as f64);
    let target = rng.uniform_range(lo, hi) * h * w;

    // w' = sqrt(target * r) <= w  and  h' = sqrt(target / r) <= h
    let fit_lo = (target / (h * h)).ln();
    let fit_hi = (w * w / target).ln();
    let (pref_lo, pref_hi) = ((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
    let (r_lo, r_hi) = (fit_lo.max(pref_lo), fit_hi.min(pref_hi));
    let log_ratio = if r_lo <= r_hi {
        rng.uniform_range(r_lo, r_hi)
    } else if fit_hi < pref_lo {
        fit_hi
    } else {
        fit_lo
    };
    let ratio = log_ratio.exp();
    let crop_w = (target * ratio).sqrt().min(w);
    let crop_h = (target / ratio).sqrt().min(h);
    if crop_w < 1.0 || crop_h < 1.0 {
        return Err(DcenError::InvalidArgument(format!(
            "crop window {crop_h:.3}x{crop_w:.3} is smaller than 1 pixel"
        )));
    }
    let top = rng.uniform_range(0.0, h - crop_h);
    let left = rng.uniform_range(0.0, w - crop_w);
    Ok(CropWindow { top, left, height: crop_h, width: crop_w })
}

pub fn random_resized_crop(img: &Image, scale: (f64, f64), out_size: usize, rng: &mut Rng) -> Result<Image> {
    if out_size == 0 {
        return Err(DcenError::InvalidArgument("out_size must be positive".into()));
    }
    let win = sample_crop_window(img.height(), img.width(), scale, rng)?;
    Ok(img.resample_rect(win.top, win.left, win.height, win.width, out_size, out_size).clamp01())
}

pub fn horizontal_flip(img: &Image) -> Image {
    Image::from_array(img.data().slice(s![.., ..;-1, ..]).to_owned())
}

/// Normalized 1-D Gaussian weights over `[-r, r]`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(DcenError::InvalidArgument(format!("blur sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let weights: Vec<f64> =
        (-radius..=radius).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    if m < n as i64 {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    let kernel = gaussian_kernel(sigma)?;
    let radius = (kernel.len() / 2) as i64;
    let (h, w, c) = img.data().dim();
    let src = img.data();
    let mut tmp = Array3::<f64>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in kernel.iter().enumerate() {
                    acc += wt * src[[y, reflect(x as i64 + k as i64 - radius, w), ch]];
                }
                tmp[[y, x, ch]] = acc;
            }
        }
    }
    let mut out = Array3::<f64>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in kernel.iter().enumerate() {
                    acc += wt * tmp[[reflect(y as i64 + k as i64 - radius, h), x, ch]];
                }
                out[[y, x, ch]] = acc;
            }
        }
    }
    Ok(Image::from_array(out).clamp01())
}

/// Rotate about the image centre by `angle_deg` (counter-clockwise as
/// displayed), bilinear sampling, zero fill outside the source.
pub fn rotate(img: &Image, angle_deg: f64, max_angle_deg: f64) -> Result<Image> {
    if !(angle_deg.abs() <= max_angle_deg) {
        return Err(DcenError::InvalidArgument(format!(
            "rotation angle {angle_deg} exceeds configured maximum {max_angle_deg}"
        )));
    }
    let (h, w, c) = img.data().dim();
    let src = img.data();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let fetch = |y: i64, x: i64, ch: usize| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            src[[y as usize, x as usize, ch]]
        }
    };
    let out = Array3::from_shape_fn((h, w, c), |(y, x, ch)| {
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        // inverse map: rotate the output offset by -theta (y axis points down)
        let sy = cy + cos * dy + sin * dx;
        let sx = cx - sin * dy + cos * dx;
        let y0 = sy.floor();
        let x0 = sx.floor();
        let fy = sy - y0;
        let fx = sx - x0;
        let (y0, x0) = (y0 as i64, x0 as i64);
        let mut v = 0.0;
        if fy < 1.0 && fx < 1.0 {
            v += (1.0 - fy) * (1.0 - fx) * fetch(y0, x0, ch);
        }
        if fx > 0.0 {
            v += (1.0 - fy) * fx * fetch(y0, x0 + 1, ch);
        }
        if fy > 0.0 {
            v += fy * (1.0 - fx) * fetch(y0 + 1, x0, ch);
        }
        if fy > 0.0 && fx > 0.0 {
            v += fy * fx * fetch(y0 + 1, x0 + 1, ch);
        }
        v
    });
    Ok(Image::from_array(out).clamp01())
}

/// Geometry of the jigsaw grid: a centred square core whose side is the
/// largest multiple of `grid_n` that fits. Pixels outside the core are left
/// in place, so the pixel multiset is preserved for every image size.
fn tile_layout(h: usize, w: usize, grid_n: usize) -> Result<(usize, usize, usize, usize)> {
    if grid_n < 2 {
        return Err(DcenError::InvalidArgument(format!("patch_swap grid must be >= 2, got {grid_n}")));
    }
    let (tile_h, tile_w) = (h / grid_n, w / grid_n);
    if tile_h == 0 || tile_w == 0 {
        return Err(DcenError::InvalidArgument(format!(
            "image {h}x{w} is smaller than a {grid_n}x{grid_n} grid"
        )));
    }
    let off_y = (h - tile_h * grid_n) / 2;
    let off_x = (w - tile_w * grid_n) / 2;
    Ok((tile_h, tile_w, off_y, off_x))
}

/// Output tile `t` (row-major) receives input tile `perm[t]`.
pub fn apply_patch_permutation(img: &Image, grid_n: usize, perm: &[usize]) -> Result<Image> {
    let (h, w, _) = img.data().dim();
    let (tile_h, tile_w, off_y, off_x) = tile_layout(h, w, grid_n)?;
    let mut check = perm.to_vec();
    check.sort_unstable();
    if check != (0..grid_n * grid_n).collect::<Vec<_>>() {
        return Err(DcenError::InvalidArgument(format!(
            "{perm:?} is not a permutation of 0..{}",
            grid_n * grid_n
        )));
    }
    let src = img.data();
    let mut out = src.clone();
    for (dst_tile, &src_tile) in perm.iter().enumerate() {
        let (dy, dx) = (dst_tile / grid_n, dst_tile % grid_n);
        let (sy, sx) = (src_tile / grid_n, src_tile % grid_n);
        let from = src.slice(s![
            off_y + sy * tile_h..off_y + (sy + 1) * tile_h,
            off_x + sx * tile_w..off_x + (sx + 1) * tile_w,
            ..
        ]);
        out.slice_mut(s![
            off_y + dy * tile_h..off_y + (dy + 1) * tile_h,
            off_x + dx * tile_w..off_x + (dx + 1) * tile_w,
            ..
        ])
        .assign(&from);
    }
    Ok(Image::from_array(out))
}

/// Shuffle a `grid_n × grid_n` jigsaw by a uniformly random permutation.
pub fn patch_swap(img: &Image, grid_n: usize, rng: &mut Rng) -> Result<Image> {
    tile_layout(img.height(), img.width(), grid_n)?;
    let perm = rng.permutation(grid_n * grid_n);
    apply_patch_permutation(img, grid_n, &perm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorJitterParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl ColorJitterParams {
    pub const V1: ColorJitterParams = ColorJitterParams::new(0.4, 0.4, 0.4, 0.4);
    pub const V2: ColorJitterParams = ColorJitterParams::new(0.4, 0.4, 0.4, 0.1);
    pub const V3: ColorJitterParams = ColorJitterParams::new(0.8, 0.8, 0.8, 0.2);

    pub const fn new(brightness: f64, contrast: f64, saturation: f64, hue: f64) -> Self {
        ColorJitterParams { brightness, contrast, saturation, hue }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("brightness", self.brightness), ("contrast", self.contrast), ("saturation", self.saturation)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DcenError::InvalidArgument(format!("color jitter {name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.hue) {
            return Err(DcenError::InvalidArgument(format!(
                "color jitter hue must lie in [0, 1], got {}",
                self.hue
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorMode {
    Gray,
    Jitter(ColorJitterParams),
}

fn luminance(px: &[f64]) -> f64 {
    LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2]
}

pub fn grayscale(img: &Image) -> Image {
    if img.channels() != 3 {
        return img.clone();
    }
    let mut out = img.data().clone();
    for mut px in out.lanes_mut(ndarray::Axis(2)) {
        let l = luminance(px.as_slice().unwrap_or(&[px[0], px[1], px[2]])).clamp(0.0, 1.0);
        px.fill(l);
    }
    Image::from_array(out)
}

fn blend(img: &mut Array3<f64>, factor: f64, other: impl Fn(usize, usize, usize) -> f64) {
    for ((y, x, c), v) in img.indexed_iter_mut() {
        *v = (factor * *v + (1.0 - factor) * other(y, x, c)).clamp(0.0, 1.0);
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Brightness, contrast, saturation and hue perturbation, in that order.
/// Factors are drawn from `[max(0, 1 - x), 1 + x]`, the hue shift (as a
/// fraction of the colour wheel) from `[-hue, hue]`. Zero parameters skip
/// their stage entirely.
pub fn color_jitter(img: &Image, params: &ColorJitterParams, rng: &mut Rng) -> Result<Image> {
    params.validate()?;
    let mut data = img.data().clone();
    let factor = |x: f64, rng: &mut Rng| rng.uniform_range((1.0 - x).max(0.0), 1.0 + x);

    if params.brightness > 0.0 {
        let b = factor(params.brightness, rng);
        data.mapv_inplace(|v| (v * b).clamp(0.0, 1.0));
    }
    if params.contrast > 0.0 {
        let c = factor(params.contrast, rng);
        let mean = if data.dim().2 == 3 {
            grayscale(&Image::from_array(data.clone())).data().mean().unwrap_or(0.0)
        } else {
            data.mean().unwrap_or(0.0)
        };
        blend(&mut data, c, |_, _, _| mean);
    }
    if params.saturation > 0.0 && data.dim().2 == 3 {
        let s = factor(params.saturation, rng);
        let gray = grayscale(&Image::from_array(data.clone())).into_array();
        blend(&mut data, s, |y, x, c| gray[[y, x, c]]);
    }
    if params.hue > 0.0 && data.dim().2 == 3 {
        let shift = rng.uniform_range(-params.hue, params.hue);
        if shift != 0.0 {
            for mut px in data.lanes_mut(ndarray::Axis(2)) {
                let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
                let (r, g, b) = hsv_to_rgb(h + shift, s, v);
                px[0] = r.clamp(0.0, 1.0);
                px[1] = g.clamp(0.0, 1.0);
                px[2] = b.clamp(0.0, 1.0);
            }
        }
    }
    Ok(Image::from_array(data))
}

pub fn color_ops(img: &Image, mode: ColorMode, rng: &mut Rng) -> Result<Image> {
    match mode {
        ColorMode::Gray => Ok(grayscale(img)),
        ColorMode::Jitter(params) => color_jitter(img, &params, rng),
    }
}
