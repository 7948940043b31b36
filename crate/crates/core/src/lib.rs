//! Dual-contrastive embedding network for generalized zero-shot learning.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evaluator;
pub mod image;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod sweep;
pub mod trainer;

pub use error::{DcenError, Result};
