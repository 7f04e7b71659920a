//! The super-resolution network.
//!
//! ```text
//! x ─ head ─┬─ [conv relu conv +]×R ─ + ─ upsample conv ─ shuffle(s) ─ tail ─ + ─ y
//!           └──────────────────────────┘                                      │
//! x ─────────────────────── bicubic ×s ───────────────────────────────────────┘
//! ```
//! All convolutions are 3×3 with reflect padding.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ops;
use super::tape::{Tape, Var};
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::resample::{ResamplePlan, ScaleFactor};

/// Smallest LR side the network accepts.
pub const MIN_INPUT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub feature_channels: usize,
    pub residual_blocks: usize,
    pub scale: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            feature_channels: 32,
            residual_blocks: 3,
            scale: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
}

impl ModelConfig {
    pub fn with_scale(scale: u32) -> Self {
        Self {
            scale,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(Error::InvalidArgument(format!(
                "scale must be 2, 3 or 4, got {}",
                self.scale
            )));
        }
        if !matches!(self.in_channels, 1 | 3) {
            return Err(Error::InvalidArgument(format!(
                "in_channels must be 1 or 3, got {}",
                self.in_channels
            )));
        }
        if self.feature_channels == 0 || self.feature_channels > 256 {
            return Err(Error::InvalidArgument(format!(
                "feature_channels must be in 1..=256, got {}",
                self.feature_channels
            )));
        }
        if self.residual_blocks > 64 {
            return Err(Error::InvalidArgument(format!(
                "at most 64 residual blocks, got {}",
                self.residual_blocks
            )));
        }
        Ok(())
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (c, f) = (self.in_channels, self.feature_channels);
        let s2 = (self.scale * self.scale) as usize;
        let mut specs = Vec::new();
        let mut conv = |name: String, cout: usize, cin: usize| {
            specs.push(ParamSpec {
                name: format!("{name}.weight"),
                shape: [cout, cin, 3, 3],
            });
            specs.push(ParamSpec {
                name: format!("{name}.bias"),
                shape: [1, cout, 1, 1],
            });
        };
        conv("head".into(), f, c);
        for i in 0..self.residual_blocks {
            conv(format!("body.{i}.conv1"), f, f);
            conv(format!("body.{i}.conv2"), f, f);
        }
        conv("upsample".into(), c * s2, f);
        conv("tail".into(), c, c);
        specs
    }

    pub fn param_count(&self) -> usize {
        self.param_specs()
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }

    pub fn check_input(&self, shape: Shape) -> Result<()> {
        let [_, c, h, w] = shape;
        if c != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} channels, input has {c}",
                self.in_channels
            )));
        }
        if h < MIN_INPUT || w < MIN_INPUT {
            return Err(Error::TooSmall(format!(
                "input is {h}x{w}, the network needs at least {MIN_INPUT}x{MIN_INPUT}"
            )));
        }
        Ok(())
    }
}

/// He-normal weights and zero biases. The tail conv starts at zero so the
/// untrained network reproduces its bicubic skip exactly; the second conv
/// of each residual block starts at a tenth of the He scale.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<Vec<Tensor<f32>>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(cfg
        .param_specs()
        .iter()
        .map(|spec| {
            let [_, cin, kh, kw] = spec.shape;
            let mut t = Tensor::zeros(spec.shape);
            if spec.name.ends_with(".weight") && !spec.name.starts_with("tail") {
                let std = (2.0 / (cin * kh * kw) as f64).sqrt();
                let damp = if spec.name.ends_with("conv2.weight") { 0.1 } else { 1.0 };
                let normal = Normal::new(0.0, std * damp).expect("finite std");
                t.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = normal.sample(&mut rng) as f32);
            }
            t
        })
        .collect())
}

fn check_params<T: Real>(cfg: &ModelConfig, params: &[Tensor<T>]) -> Result<()> {
    let specs = cfg.param_specs();
    if specs.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "model needs {} parameter tensors, got {}",
            specs.len(),
            params.len()
        )));
    }
    for (s, p) in specs.iter().zip(params) {
        if s.shape != p.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{} has shape {:?}, expected {:?}",
                s.name,
                p.shape(),
                s.shape
            )));
        }
    }
    Ok(())
}

fn upsample_plan(cfg: &ModelConfig, h: usize, w: usize) -> Result<ResamplePlan> {
    ResamplePlan::bicubic_up(h, w, ScaleFactor::integer(cfg.scale)?)
}

/// Inference without recording a graph.
pub fn forward<T: Real>(cfg: &ModelConfig, params: &[Tensor<T>], x: &Tensor<T>) -> Result<Tensor<T>> {
    cfg.validate()?;
    check_params(cfg, params)?;
    cfg.check_input(x.shape())?;
    let conv = |i: usize, t: &Tensor<T>| ops::conv2d(t, &params[2 * i], &params[2 * i + 1]);
    let head = conv(0, x)?;
    let mut feat = head.clone();
    for b in 0..cfg.residual_blocks {
        let a = ops::relu(&conv(1 + 2 * b, &feat)?);
        feat = ops::add(&feat, &conv(2 + 2 * b, &a)?)?;
    }
    let feat = ops::add(&feat, &head)?;
    let n = 1 + 2 * cfg.residual_blocks;
    let up = ops::pixel_shuffle(&conv(n, &feat)?, cfg.scale as usize)?;
    let out = conv(n + 1, &up)?;
    let [_, _, h, w] = x.shape();
    let skip = ops::resample(x, &upsample_plan(cfg, h, w)?)?;
    ops::add(&out, &skip)
}

/// The same network recorded on a tape. `params` are tape variables in
/// [`ModelConfig::param_specs`] order.
pub fn forward_tape<T: Real>(cfg: &ModelConfig, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<Var> {
    cfg.validate()?;
    if params.len() != cfg.param_specs().len() {
        return Err(Error::ShapeMismatch("parameter variable count".into()));
    }
    let shape = tape.value(x).shape();
    cfg.check_input(shape)?;
    let head = tape.conv2d(x, params[0], params[1])?;
    let mut feat = head;
    for b in 0..cfg.residual_blocks {
        let i = 2 + 4 * b;
        let a = tape.conv2d(feat, params[i], params[i + 1])?;
        let a = tape.relu(a);
        let a = tape.conv2d(a, params[i + 2], params[i + 3])?;
        feat = tape.add(feat, a)?;
    }
    let feat = tape.add(feat, head)?;
    let i = 2 + 4 * cfg.residual_blocks;
    let up = tape.conv2d(feat, params[i], params[i + 1])?;
    let up = tape.pixel_shuffle(up, cfg.scale as usize)?;
    let out = tape.conv2d(up, params[i + 2], params[i + 3])?;
    let plan = Arc::new(upsample_plan(cfg, shape[2], shape[3])?);
    let skip = tape.resample(x, plan)?;
    tape.add(out, skip)
}
