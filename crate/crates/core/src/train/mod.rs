//! Offline training on pseudo-pairs, the online single-image baseline and
//! plain inference.

mod zssr;

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use zssr::{train_zssr, ZssrConfig, ZssrResult};

use crate::denoise::DenoiseSetting;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{adam_step, forward_tape, init_params, AdamConfig, AdamState, Checkpoint, ModelConfig, Tape, Tensor, Var};
use crate::pairs::{augment, sample_patch, AugmentPolicy, PatchPair, PseudoPair};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Son patch side; father patches are `scale` times larger.
    pub lr_patch: usize,
    pub learning_rate: f64,
    /// The learning rate halves every this fraction of `steps`.
    pub halve_every: f64,
    pub seed: u64,
    pub augment: AugmentPolicy,
    pub scale: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            lr_patch: 16,
            learning_rate: 2e-3,
            halve_every: 0.4,
            seed: 0,
            augment: AugmentPolicy::geometric(),
            scale: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be at least 1".into()));
        }
        if self.lr_patch < crate::nn::MIN_INPUT {
            return Err(Error::InvalidArgument(format!(
                "lr_patch must be at least {}, got {}",
                crate::nn::MIN_INPUT,
                self.lr_patch
            )));
        }
        check_lr(self.learning_rate)?;
        if !(self.halve_every > 0.0 && self.halve_every.is_finite()) {
            return Err(Error::InvalidArgument("halve_every must be positive".into()));
        }
        self.augment.validate()
    }

    /// Step-decayed learning rate for 0-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let period = ((self.steps as f64 * self.halve_every).round() as usize).max(1);
        self.learning_rate * 0.5f64.powi((step / period) as i32)
    }
}

pub(crate) fn check_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,elapsed_ms\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.8},{:.3}", r.step, r.loss, r.elapsed_ms);
        }
        s
    }

    /// Mean loss over rows `range` (clamped to the log).
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let rows = &self.rows[range.start.min(self.rows.len())..range.end.min(self.rows.len())];
        rows.iter().map(|r| r.loss).sum::<f64>() / rows.len().max(1) as f64
    }
}

/// Parameters, optimiser state and the graph plumbing for one training run.
pub(crate) struct Trainer {
    pub model: ModelConfig,
    pub params: Vec<Tensor<f32>>,
    pub adam: AdamState,
    pub adam_cfg: AdamConfig,
}

impl Trainer {
    pub fn new(model: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&model, seed)?;
        let adam = AdamState::new(&params);
        Ok(Self {
            model,
            params,
            adam,
            adam_cfg: AdamConfig::default(),
        })
    }

    /// One forward/backward/update on a batch; returns the loss.
    pub fn step(&mut self, patches: &[PatchPair], lr: f64) -> Result<f64> {
        let sons: Vec<Image> = patches.iter().map(|p| p.son.clone()).collect();
        let fathers: Vec<Image> = patches.iter().map(|p| p.father.clone()).collect();
        let x = Tensor::from_images(&sons)?;
        let y = Tensor::from_images(&fathers)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
        let xv = tape.leaf(x, false);
        let yv = tape.leaf(y, false);
        let pred = forward_tape(&self.model, &mut tape, &vars, xv)?;
        let loss_var = tape.l1_loss(pred, yv)?;
        let loss = tape.value(loss_var).data()[0] as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss is {loss}")));
        }
        tape.backward(loss_var)?;
        let grads: Vec<Vec<f32>> = vars
            .iter()
            .map(|&v| tape.take_grad(v).unwrap_or_else(|| vec![0.0; tape.value(v).numel()]))
            .collect();
        adam_step(&mut self.params, &grads, &mut self.adam, &self.adam_cfg, lr)?;
        Ok(loss)
    }

    pub fn checkpoint(self, step: u64) -> Checkpoint {
        Checkpoint {
            config: self.model,
            step,
            params: self.params,
            adam: Some(self.adam),
        }
    }
}

/// Trains a fresh model on `pairs` for `cfg.steps` steps. One seeded stream
/// drives initialisation, pair choice, cropping and augmentation, so a run
/// is reproducible bit for bit.
pub fn train_simusr(pairs: &[PseudoPair], cfg: &TrainConfig, model: &ModelConfig) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    model.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    if cfg.scale != model.scale {
        return Err(Error::InvalidArgument(format!(
            "training scale {} differs from model scale {}",
            cfg.scale, model.scale
        )));
    }
    for p in pairs {
        if p.scale.as_integer() != Some(model.scale) {
            return Err(Error::ScaleMismatch {
                checkpoint: model.scale,
                requested: p.scale.value().round() as u32,
            });
        }
        if p.son.channels() != model.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "pair `{}` has {} channels, model expects {}",
                p.source_id,
                p.son.channels(),
                model.in_channels
            )));
        }
        let (h, w) = p.son.dims();
        if h < cfg.lr_patch || w < cfg.lr_patch {
            return Err(Error::TooSmall(format!(
                "son of `{}` is {h}x{w}, smaller than lr_patch {}",
                p.source_id, cfg.lr_patch
            )));
        }
    }

    let start = Instant::now();
    let mut trainer = Trainer::new(*model, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mixup = cfg.augment.uses_mixup();
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        let mut ids = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let i = rng.gen_range(0..pairs.len());
            let patch = sample_patch(&pairs[i], cfg.lr_patch, &mut rng)?;
            let partner = if mixup {
                let j = rng.gen_range(0..pairs.len());
                Some(sample_patch(&pairs[j], cfg.lr_patch, &mut rng)?)
            } else {
                None
            };
            batch.push(augment(&patch, &cfg.augment, &mut rng, partner.as_ref())?);
            ids.push(pairs[i].source_id.as_str());
        }
        let loss = trainer.step(&batch, cfg.lr_at(step)).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {step} (pairs {})", ids.join(", "))),
            other => other,
        })?;
        log.rows.push(LogRow {
            step,
            loss,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok((trainer.checkpoint(cfg.steps as u64), log))
}

pub fn ensure_scale(ckpt: &Checkpoint, requested: u32) -> Result<()> {
    if ckpt.config.scale == requested {
        Ok(())
    } else {
        Err(Error::ScaleMismatch {
            checkpoint: ckpt.config.scale,
            requested,
        })
    }
}

/// Optional denoise, one forward pass, clamp to `[0, 1]`. Never updates
/// parameters or runs a backward pass.
pub fn infer(ckpt: &Checkpoint, lr: &Image, denoise: &DenoiseSetting) -> Result<Image> {
    let (input, _) = denoise.apply(lr)?;
    Ok(ckpt.forward_image(&input)?.clamped())
}
