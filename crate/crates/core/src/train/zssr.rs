use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_lr, LogRow, TrainLog, Trainer};
use crate::denoise::DenoiseSetting;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{ModelConfig, Tensor, MIN_INPUT};
use crate::pairs::{augment, sample_patch, AugmentPolicy, PseudoPair};
use crate::resample::{resample, Direction, Kernel, ScaleFactor};

#[derive(Debug, Clone, PartialEq)]
pub struct ZssrConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Halve the learning rate when the mean loss over this many steps is
    /// no lower than over the window before it.
    pub plateau: usize,
    pub lr_patch: usize,
    pub batch: usize,
    pub seed: u64,
    pub denoise: DenoiseSetting,
    pub kernel: Kernel,
    pub antialias: bool,
}

impl Default for ZssrConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 1e-3,
            plateau: 200,
            lr_patch: 32,
            batch: 1,
            seed: 0,
            denoise: DenoiseSetting::Off,
            kernel: Kernel::BICUBIC,
            antialias: true,
        }
    }
}

impl ZssrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if self.batch == 0 || self.plateau == 0 {
            return Err(Error::InvalidArgument("batch and plateau must be at least 1".into()));
        }
        if self.lr_patch < MIN_INPUT {
            return Err(Error::InvalidArgument(format!(
                "lr_patch must be at least {MIN_INPUT}, got {}",
                self.lr_patch
            )));
        }
        check_lr(self.learning_rate)
    }
}

#[derive(Debug, Clone)]
pub struct ZssrResult {
    pub sr: Image,
    pub log: TrainLog,
    /// Denoise, training and the final forward pass.
    pub wall_ms: f64,
    pub sigma: Option<f64>,
}

/// Trains a fresh model on the single pair `(test_lr downscaled, test_lr)`
/// with flips and quarter turns only, then super-resolves `test_lr`.
pub fn train_zssr(test_lr: &Image, cfg: &ZssrConfig, model: &ModelConfig) -> Result<ZssrResult> {
    cfg.validate()?;
    model.validate()?;
    let start = Instant::now();
    let scale = ScaleFactor::integer(model.scale)?;
    let (father, sigma) = cfg.denoise.apply(test_lr)?;
    let (h, w) = father.dims();
    let need = cfg.lr_patch * model.scale as usize;
    if h < need || w < need {
        return Err(Error::TooSmall(format!(
            "input is {h}x{w}; lr_patch {} at scale {} needs {need}x{need}",
            cfg.lr_patch, model.scale
        )));
    }
    let son = resample(&father, scale, &cfg.kernel, Direction::Down, cfg.antialias)?;
    let pair = PseudoPair {
        source_id: "input".into(),
        father,
        son,
        scale,
        sigma,
    };

    let mut trainer = Trainer::new(*model, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let policy = AugmentPolicy::geometric();
    let mut lr = cfg.learning_rate;
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let batch = (0..cfg.batch)
            .map(|_| augment(&sample_patch(&pair, cfg.lr_patch, &mut rng)?, &policy, &mut rng, None))
            .collect::<Result<Vec<_>>>()?;
        let loss = trainer
            .step(&batch, lr)
            .map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {step}")),
                other => other,
            })?;
        log.rows.push(LogRow {
            step,
            loss,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        let done = step + 1;
        if done % cfg.plateau == 0 && done >= 2 * cfg.plateau {
            let recent = log.mean_loss(done - cfg.plateau..done);
            let before = log.mean_loss(done - 2 * cfg.plateau..done - cfg.plateau);
            if recent >= before {
                lr *= 0.5;
            }
        }
    }
    let ckpt = trainer.checkpoint(cfg.steps as u64);
    let sr = crate::nn::forward(&ckpt.config, &ckpt.params, &Tensor::from_image(&pair.father))?;
    if !sr.is_finite() {
        return Err(Error::NonFinite("ZSSR output".into()));
    }
    let sr = sr.to_image(0)?.clamped();
    Ok(ZssrResult {
        sr,
        log,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        sigma,
    })
}
