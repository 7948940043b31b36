use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::block::{FcBlock, FcCache};
use crate::error::{DcenError, Result};
use crate::nn::{prefixed, Activation, NamedView, NamedViewMut, Parameters};
use crate::rng::Rng;

/// Semantic encoder `h`: K blocks of affine → batch norm → ReLU mapping
/// attribute vectors into the embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticEncoder {
    pub blocks: Vec<FcBlock>,
}

pub struct SemanticCache(Vec<FcCache>);

impl SemanticEncoder {
    pub fn new(attr_dim: usize, embed_dim: usize, depth: usize, rng: &mut Rng) -> Self {
        let blocks = (0..depth)
            .map(|i| {
                let in_dim = if i == 0 { attr_dim } else { embed_dim };
                FcBlock::new(in_dim, embed_dim, true, Activation::Relu, rng)
            })
            .collect();
        SemanticEncoder { blocks }
    }

    pub fn attr_dim(&self) -> usize {
        self.blocks[0].linear.in_dim()
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    fn check(&self, attrs: &Array2<f64>) -> Result<()> {
        if attrs.ncols() != self.attr_dim() {
            return Err(DcenError::DimensionMismatch(format!(
                "semantic encoder expects {} attributes per row, got {}",
                self.attr_dim(),
                attrs.ncols()
            )));
        }
        if attrs.nrows() == 0 {
            return Err(DcenError::InvalidArgument("empty attribute batch".into()));
        }
        Ok(())
    }

    pub fn forward_train(&mut self, attrs: &Array2<f64>) -> Result<(Array2<f64>, SemanticCache)> {
        self.check(attrs)?;
        let mut x = attrs.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (y, cache) = block.forward_train(&x);
            caches.push(cache);
            x = y;
        }
        Ok((x, SemanticCache(caches)))
    }

    pub fn forward_eval(&self, attrs: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(attrs)?;
        Ok(self.blocks.iter().fold(attrs.clone(), |x, block| block.forward_eval(&x)))
    }

    pub fn backward(&self, cache: &SemanticCache, d_raw: &Array2<f64>, grad: &mut SemanticEncoder) {
        let mut d = d_raw.clone();
        for (i, (block, c)) in self.blocks.iter().zip(&cache.0).enumerate().rev() {
            d = block.backward(c, &d, &mut grad.blocks[i]);
        }
    }
}

impl Parameters for SemanticEncoder {
    fn params(&self) -> Vec<NamedView<'_>> {
        self.blocks.iter().enumerate().flat_map(|(i, b)| prefixed(&format!("block{i}"), b.params())).collect()
    }

    fn params_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        self.blocks
            .iter_mut()
            .enumerate()
            .flat_map(|(i, b)| prefixed(&format!("block{i}"), b.params_mut()))
            .collect()
    }

    fn buffers(&self) -> Vec<NamedView<'_>> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| prefixed(&format!("block{i}"), b.buffers()))
            .collect()
    }

    fn buffers_mut(&mut self) -> Vec<NamedViewMut<'_>> {
        self.blocks
            .iter_mut()
            .enumerate()
            .flat_map(|(i, b)| prefixed(&format!("block{i}"), b.buffers_mut()))
            .collect()
    }
}
