//! Visual encoders `f` (query) and `g` (momentum key). Both are instances
//! of [`VisualEncoder`] with congruent parameters.

use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::block::{FcBlock, FcCache};
use crate::error::{DcenError, Result};
use crate::image::Image;
use crate::nn::{
    prefixed, relu, relu_backward, Activation, BatchNorm, BatchStats, BnCache, Conv2d, Linear, NamedView,
    NamedViewMut, Parameters,
};
use crate::rng::Rng;

/// Input batch: images as a CNHW tensor, or feature vectors as rows.
#[derive(Debug, Clone, PartialEq)]
pub enum VisualBatch {
    Images(Array4<f64>),
    Features(Array2<f64>),
}

impl VisualBatch {
    pub fn from_images(images: &[&Image]) -> Result<Self> {
        let first = images.first().ok_or_else(|| DcenError::InvalidArgument("empty image batch".into()))?;
        let (h, w, c) = first.data().dim();
        let mut x = Array4::<f64>::zeros((c, images.len(), h, w));
        for (n, img) in images.iter().enumerate() {
            if img.data().dim() != (h, w, c) {
                return Err(DcenError::DimensionMismatch(format!(
                    "image {n} is {:?}, batch expects {:?}",
                    img.data().dim(),
                    (h, w, c)
                )));
            }
            for ((y, xx, ch), v) in img.data().indexed_iter() {
                x[[ch, n, y, xx]] = *v;
            }
        }
        Ok(VisualBatch::Images(x))
    }

    pub fn from_features(rows: &[&ndarray::Array1<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| DcenError::InvalidArgument("empty feature batch".into()))?;
        let dim = first.len();
        let mut x = Array2::<f64>::zeros((rows.len(), dim));
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(DcenError::DimensionMismatch(format!(
                    "feature row {i} has length {}, batch expects {dim}",
                    r.len()
                )));
            }
            x.row_mut(i).assign(r);
        }
        Ok(VisualBatch::Features(x))
    }

    pub fn len(&self) -> usize {
        match self {
            VisualBatch::Images(x) => x.dim().1,
            VisualBatch::Features(x) => x.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: BatchNorm,
}

/// Strided 3×3 conv blocks, global average pool, affine head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNet {
    pub blocks: Vec<ConvBlock>,
    pub head: Linear,
    pub input_size: usize,
    pub channels: usize,
}

/// One hidden FC block and an affine head, for feature-vector inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNet {
    pub hidden: FcBlock,
    pub head: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VisualEncoder {
    Conv(ConvNet),
    Mlp(MlpNet),
}

struct ConvBlockCache {
    input_shape: (usize, usize, usize, usize),
    cols: Array2<f64>,
    bn: BnCache,
    pre_act: Array2<f64>,
}

enum CacheInner {
    Conv { blocks: Vec<ConvBlockCache>, last_shape: (usize, usize, usize, usize), pooled: Array2<f64> },
    Mlp { hidden: FcCache, hidden_out: Array2<f64> },
}

/// Activations saved by [`VisualEncoder::forward_train`].
pub struct VisualCache(CacheInner);

impl ConvNet {
    pub fn new(
        channels: usize,
        input_size: usize,
        widths: &[usize],
        embed_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut blocks = Vec::with_capacity(widths.len());
        let mut c_in = channels;
        for &w in widths {
            blocks.push(ConvBlock { conv: Conv2d::new(c_in, w, 3, 2, 1, rng), norm: BatchNorm::new(w) });
            c_in = w;
        }
        ConvNet { blocks, head: Linear::new(c_in, embed_dim, rng), input_size, channels }
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (c, _, h, w) = x.dim();
        if c != self.channels || h != self.input_size || w != self.input_size {
            return Err(DcenError::DimensionMismatch(format!(
                "visual encoder expects {s}x{s}x{} images, got {h}x{w}x{c}",
                self.channels,
                s = self.input_size
            )));
        }
        Ok(())
    }

    /// Forward pass. In train mode also returns the cache and the batch
    /// statistics to fold into the running averages.
    fn forward(&self, x: &Array4<f64>, train: bool) -> (Array2<f64>, Option<(VisualCache, Vec<BatchStats>)>) {
        let mut act = x.clone();
        let mut caches = Vec::new();
        let mut stats = Vec::new();
        for block in &self.blocks {
            let input_shape = act.dim();
            let (z, cols) = block.conv.forward(&act);
            let shape = z.dim();
            let z2 = z
                .into_shape_with_order((shape.0, shape.1 * shape.2 * shape.3))
                .expect("contiguous conv output");
            let (pre_act, bn) = if train {
                let (y, c, st) = block.norm.normalize_batch(z2.view());
                stats.push(st);
                (y, Some(c))
            } else {
                (block.norm.forward_eval(z2.view()), None)
            };
            act = relu(&pre_act).into_shape_with_order(shape).expect("contiguous activation");
            if let Some(bn) = bn {
                caches.push(ConvBlockCache { input_shape, cols, bn, pre_act });
            }
        }
        let last_shape = act.dim();
        let (c, n, h, w) = last_shape;
        let pooled = act
            .into_shape_with_order((c, n, h * w))
            .expect("contiguous activation")
            .mean_axis(Axis(2))
            .expect("non-empty spatial extent")
            .reversed_axes()
            .as_standard_layout()
            .to_owned();
        let raw = self.head.forward(&pooled);
        let cache =
            train.then(|| (VisualCache(CacheInner::Conv { blocks: caches, last_shape, pooled }), stats));
        (raw, cache)
    }
}

impl VisualEncoder {
    pub fn embed_dim(&self) -> usize {
        match self {
            VisualEncoder::Conv(net) => net.head.out_dim(),
            VisualEncoder::Mlp(net) => net.head.out_dim(),
        }
    }

    fn check(&self, batch: &VisualBatch) -> Result<()> {
        if batch.is_empty() {
            return Err(DcenError::InvalidArgument("empty visual batch".into()));
        }
        match (self, batch) {
            (VisualEncoder::Conv(net), VisualBatch::Images(x)) => net.check_input(x),
            (VisualEncoder::Mlp(net), VisualBatch::Features(x)) => {
                if x.ncols() != net.hidden.linear.in_dim() {
                    return Err(DcenError::DimensionMismatch(format!(
                        "visual encoder expects {}-dim features, got {}",
                        net.hidden.linear.in_dim(),
                        x.ncols()
                    )));
                }
                Ok(())
            }
            (VisualEncoder::Conv(_), VisualBatch::Features(_)) => {
                Err(DcenError::DimensionMismatch("convolutional encoder given feature vectors".into()))
            }
            (VisualEncoder::Mlp(_), VisualBatch::Images(_)) => {
                Err(DcenError::DimensionMismatch("feature encoder given images".into()))
            }
        }
    }

    /// Train-mode forward (batch statistics; updates running stats).
    pub fn forward_train(&mut self, batch: &VisualBatch) -> Result<(Array2<f64>, VisualCache)> {
        self.check(batch)?;
        Ok(match (self, batch) {
            (VisualEncoder::Conv(net), VisualBatch::Images(x)) => {
                let (raw, cache) = net.forward(x, true);
                let (cache, stats) = cache.expect("train forward keeps cache");
                for (block, st) in net.blocks.iter_mut().zip(&stats) {
                    block.norm.update_running(st);
                }
                (raw, cache)
            }
            (VisualEncoder::Mlp(net), VisualBatch::Features(x)) => {
                let (hidden_out, hidden) = net.hidden.forward_train(x);
                let raw = net.head.forward(&hidden_out);
                (raw, VisualCache(CacheInner::Mlp { hidden, hidden_out }))
            }
            _ => unreachable!("checked above"),
        })
    }

    /// Train-mode normalization without a cache or running-stat update;
    /// used by the momentum key encoder, which never receives gradients.
    pub fn forward_keys(&self, batch: &VisualBatch) -> Result<Array2<f64>> {
        self.check(batch)?;
        Ok(match (self, batch) {
            (VisualEncoder::Conv(net), VisualBatch::Images(x)) => net.forward(x, true).0,
            (VisualEncoder::Mlp(net), VisualBatch::Features(x)) => {
                net.head.forward(&net.hidden.forward_batch_stats(x).0)
            }
            _ => unreachable!("checked above"),
        })
    }

    /// Eval-mode forward (running statistics). Rows are independent.
    pub fn forward_eval(&self, batch: &VisualBatch) -> Result<Array2<f64>> {
        self.check(batch)?;
        Ok(match (self, batch) {
            (VisualEncoder::Conv(net), VisualBatch::Images(x)) => net.forward(x, false).0,
            (VisualEncoder::Mlp(net), VisualBatch::Features(x)) => {
                net.head.forward(&net.hidden.forward_eval(x))
            }
            _ => unreachable!("checked above"),
        })
    }

    /// Accumulate parameter gradients for `d_raw` into `grad`.
    pub fn backward(&self, cache: &VisualCache, d_raw: &Array2<f64>, grad: &mut VisualEncoder) {
        match (self, &cache.0, grad) {
            (
                VisualEncoder::Conv(net),
                CacheInner::Conv { blocks, last_shape, pooled },
                VisualEncoder::Conv(g),
            ) => {
                let d_pooled = net.head.backward(pooled, d_raw, &mut g.head);
                let (c, n, h, w) = *last_shape;
                let scale = 1.0 / (h * w) as f64;
                let mut d_act =
                    Array4::from_shape_fn((c, n, h, w), |(ci, ni, _, _)| d_pooled[[ni, ci]] * scale);
                for (i, (block, bc)) in net.blocks.iter().zip(blocks).enumerate().rev() {
                    let shape = d_act.dim();
                    let d_act2 = d_act
                        .into_shape_with_order((shape.0, shape.1 * shape.2 * shape.3))
                        .expect("contiguous gradient");
                    let d_pre = relu_backward(&bc.pre_act, &d_act2);
                    let gb = &mut g.blocks[i];
                    let d_z = block
                        .norm
                        .backward(&bc.bn, d_pre.view(), &mut gb.norm)
                        .into_shape_with_order(shape)
                        .expect("contiguous gradient");
                    if i == 0 {
                        // Input gradient is not needed; only accumulate dW.
                        let co = block.conv.out_channels();
                        let dz2 = d_z.view().into_shape_with_order((co, d_z.len() / co)).unwrap();
                        gb.conv.weight += &dz2.dot(&bc.cols.t());
                        break;
                    }
                    d_act = block.conv.backward(&bc.cols, bc.input_shape, &d_z, &mut gb.conv);
                }
            }
            (VisualEncoder::Mlp(net), CacheInner::Mlp { hidden, hidden_out }, VisualEncoder::Mlp(g)) => {
                let d_hidden = net.head.backward(hidden_out, d_raw, &mut g.head);
                net.hidden.backward(hidden, &d_hidden, &mut g.hidden);
            }
            _ => panic!("visual cache does not match encoder kind"),
        }
    }
}

impl MlpNet {
    pub fn new(in_dim: usize, hidden: usize, embed_dim: usize, rng: &mut Rng) -> Self {
        MlpNet {
            hidden: FcBlock::new(in_dim, hidden, true, Activation::Relu, rng),
            head: Linear::new(hidden, embed_dim, rng),
        }
    }
}

impl Parameters for VisualEncoder {
    fn params(&self) -> Vec<NamedView<'_>> {
        match self {
            VisualEncoder::Conv(net) => {
                let mut out = Vec::new();
                for (i, b) in net.blocks.iter().enumerate() {
                    out.extend(prefixed(&format!("block{i}.conv"), b.conv.params()));
                    out.extend(prefixed(&format!("block{i}.norm"), b.norm.params()));
                }
                out.extend(prefixed("head", net.head.params()));
                out
            }
            VisualEncoder::Mlp(net) => {
                let mut out = prefixed("hidden", net.hidden.params());
                out.extend(prefixed("head", net.head.params()));
                out
            }
        }
    }

    fn params_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        match self {
            VisualEncoder::Conv(net) => {
                let mut out = Vec::new();
                for (i, b) in net.blocks.iter_mut().enumerate() {
                    out.extend(prefixed(&format!("block{i}.conv"), b.conv.params_mut()));
                    out.extend(prefixed(&format!("block{i}.norm"), b.norm.params_mut()));
                }
                out.extend(prefixed("head", net.head.params_mut()));
                out
            }
            VisualEncoder::Mlp(net) => {
                let mut out = prefixed("hidden", net.hidden.params_mut());
                out.extend(prefixed("head", net.head.params_mut()));
                out
            }
        }
    }

    fn buffers(&self) -> Vec<NamedView<'_>> {
        match self {
            VisualEncoder::Conv(net) => net
                .blocks
                .iter()
                .enumerate()
                .flat_map(|(i, b)| prefixed(&format!("block{i}.norm"), b.norm.buffers()))
                .collect(),
            VisualEncoder::Mlp(net) => prefixed("hidden", net.hidden.buffers()),
        }
    }

    fn buffers_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        match self {
            VisualEncoder::Conv(net) => net
                .blocks
                .iter_mut()
                .enumerate()
                .flat_map(|(i, b)| prefixed(&format!("block{i}.norm"), b.norm.buffers_mut()))
                .collect(),
            VisualEncoder::Mlp(net) => prefixed("hidden", net.hidden.buffers_mut()),
        }
    }
}
