use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::block::{FcBlock, FcCache};
use crate::error::{DcenError, Result};
use crate::nn::{prefixed, Activation, NamedView, NamedViewMut, Parameters};
use crate::rng::Rng;

/// Masked-attribute decoder `ĥ`.
///
/// The visual feature and the semantic embedding each pass one FC block;
/// the two results are concatenated and decoded by K blocks, the last of
/// which is affine → sigmoid so predictions lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDecoder {
    pub visual_in: FcBlock,
    pub semantic_in: FcBlock,
    pub blocks: Vec<FcBlock>,
}

pub struct DecoderCache {
    visual: FcCache,
    semantic: FcCache,
    blocks: Vec<FcCache>,
    fused_dim: usize,
}

impl AttributeDecoder {
    pub fn new(feature_dim: usize, embed_dim: usize, attr_dim: usize, depth: usize, rng: &mut Rng) -> Self {
        let visual_in = FcBlock::new(feature_dim, embed_dim, true, Activation::Relu, rng);
        let semantic_in = FcBlock::new(embed_dim, embed_dim, true, Activation::Relu, rng);
        let blocks = (0..depth)
            .map(|i| {
                let in_dim = if i == 0 { 2 * embed_dim } else { embed_dim };
                if i + 1 == depth {
                    FcBlock::new(in_dim, attr_dim, false, Activation::Sigmoid, rng)
                } else {
                    FcBlock::new(in_dim, embed_dim, true, Activation::Relu, rng)
                }
            })
            .collect();
        AttributeDecoder { visual_in, semantic_in, blocks }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn attr_dim(&self) -> usize {
        self.blocks.last().map(|b| b.linear.out_dim()).unwrap_or(0)
    }

    fn check(&self, visual_raw: &Array2<f64>, semantic_raw: &Array2<f64>) -> Result<()> {
        if visual_raw.nrows() != semantic_raw.nrows() {
            return Err(DcenError::DimensionMismatch(format!(
                "decoder batch sizes differ: {} visual rows vs {} semantic rows",
                visual_raw.nrows(),
                semantic_raw.nrows()
            )));
        }
        if visual_raw.ncols() != self.visual_in.linear.in_dim()
            || semantic_raw.ncols() != self.semantic_in.linear.in_dim()
        {
            return Err(DcenError::DimensionMismatch(format!(
                "decoder expects ({}, {}) input widths, got ({}, {})",
                self.visual_in.linear.in_dim(),
                self.semantic_in.linear.in_dim(),
                visual_raw.ncols(),
                semantic_raw.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward_train(
        &mut self,
        visual_raw: &Array2<f64>,
        semantic_raw: &Array2<f64>,
    ) -> Result<(Array2<f64>, DecoderCache)> {
        self.check(visual_raw, semantic_raw)?;
        let (v, visual) = self.visual_in.forward_train(visual_raw);
        let (a, semantic) = self.semantic_in.forward_train(semantic_raw);
        let fused_dim = v.ncols();
        let mut x = concatenate(Axis(1), &[v.view(), a.view()]).expect("equal batch sizes");
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (y, cache) = block.forward_train(&x);
            blocks.push(cache);
            x = y;
        }
        Ok((x, DecoderCache { visual, semantic, blocks, fused_dim }))
    }

    pub fn forward_eval(&self, visual_raw: &Array2<f64>, semantic_raw: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(visual_raw, semantic_raw)?;
        let v = self.visual_in.forward_eval(visual_raw);
        let a = self.semantic_in.forward_eval(semantic_raw);
        let x = concatenate(Axis(1), &[v.view(), a.view()]).expect("equal batch sizes");
        Ok(self.blocks.iter().fold(x, |x, b| b.forward_eval(&x)))
    }

    /// Returns gradients w.r.t. `(visual_raw, semantic_raw)`.
    pub fn backward(
        &self,
        cache: &DecoderCache,
        d_pred: &Array2<f64>,
        grad: &mut AttributeDecoder,
    ) -> (Array2<f64>, Array2<f64>) {
        let mut d = d_pred.clone();
        for (i, (block, c)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            d = block.backward(c, &d, &mut grad.blocks[i]);
        }
        let d_v = d.slice(s![.., ..cache.fused_dim]).to_owned();
        let d_a = d.slice(s![.., cache.fused_dim..]).to_owned();
        let d_visual = self.visual_in.backward(&cache.visual, &d_v, &mut grad.visual_in);
        let d_semantic = self.semantic_in.backward(&cache.semantic, &d_a, &mut grad.semantic_in);
        (d_visual, d_semantic)
    }
}

impl Parameters for AttributeDecoder {
    fn params(&self) -> Vec<NamedView<'_>> {
        let mut out = prefixed("visual_in", self.visual_in.params());
        out.extend(prefixed("semantic_in", self.semantic_in.params()));
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(prefixed(&format!("block{i}"), b.params()));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        let mut out = prefixed("visual_in", self.visual_in.params_mut());
        out.extend(prefixed("semantic_in", self.semantic_in.params_mut()));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(prefixed(&format!("block{i}"), b.params_mut()));
        }
        out
    }

    fn buffers(&self) -> Vec<NamedView<'_>> {
        let mut out = prefixed("visual_in", self.visual_in.buffers());
        out.extend(prefixed("semantic_in", self.semantic_in.buffers()));
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(prefixed(&format!("block{i}"), b.buffers()));
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        let mut out = prefixed("visual_in", self.visual_in.buffers_mut());
        out.extend(prefixed("semantic_in", self.semantic_in.buffers_mut()));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(prefixed(&format!("block{i}"), b.buffers_mut()));
        }
        out
    }
}
