use ndarray::{s, Array2, ArrayView2};

use crate::error::{DcenError, Result};

/// FIFO ring buffer of past key embeddings used as contrastive negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    buffer: Array2<f64>,
    len: usize,
    cursor: usize,
}

impl NegativeQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(DcenError::InvalidArgument(format!(
                "queue needs positive capacity and dim, got {capacity}x{dim}"
            )));
        }
        Ok(NegativeQueue { buffer: Array2::zeros((capacity, dim)), len: 0, cursor: 0 })
    }

    /// Rebuild from stored state (checkpoint restore).
    pub fn from_parts(buffer: Array2<f64>, len: usize, cursor: usize) -> Result<Self> {
        let cap = buffer.nrows();
        if cap == 0 || len > cap || cursor >= cap || (len < cap && cursor != len) {
            return Err(DcenError::Checkpoint(format!(
                "inconsistent queue state: capacity {cap}, length {len}, cursor {cursor}"
            )));
        }
        Ok(NegativeQueue { buffer, len, cursor })
    }

    pub fn capacity(&self) -> usize {
        self.buffer.nrows()
    }

    pub fn dim(&self) -> usize {
        self.buffer.ncols()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn buffer(&self) -> &Array2<f64> {
        &self.buffer
    }

    /// Stored rows in storage order. Row order does not affect the loss.
    pub fn negatives(&self) -> ArrayView2<'_, f64> {
        self.buffer.slice(s![..self.len, ..])
    }

    /// Stored rows, oldest first.
    pub fn ordered_rows(&self) -> Array2<f64> {
        let start = if self.len < self.capacity() { 0 } else { self.cursor };
        let mut out = Array2::zeros((self.len, self.dim()));
        for i in 0..self.len {
            out.row_mut(i).assign(&self.buffer.row((start + i) % self.capacity()));
        }
        out
    }

    pub fn enqueue(&mut self, keys: &Array2<f64>) -> Result<()> {
        if keys.ncols() != self.dim() {
            return Err(DcenError::DimensionMismatch(format!(
                "queue holds {}-dim keys, got {}",
                self.dim(),
                keys.ncols()
            )));
        }
        let cap = self.capacity();
        for row in keys.rows() {
            self.buffer.row_mut(self.cursor).assign(&row);
            self.cursor = (self.cursor + 1) % cap;
            self.len = (self.len + 1).min(cap);
        }
        Ok(())
    }
}
