//! Unsupervised super-resolution from pseudo-pairs: resampling, denoising,
//! pair construction, a small trainable network and evaluation metrics.

pub mod denoise;
pub mod error;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod num;
pub mod pairs;
pub mod resample;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use image::{ColorMode, Image};
