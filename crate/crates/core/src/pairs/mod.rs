//! Pseudo-pairs built from a collection of LR images: each image becomes a
//! father (the target) and its downscaled copy the son (the input).

mod augment;
mod store;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

pub use augment::{
    augment, blend, cutblur, cutout, hflip, mixup, rgb_permute, rot90, vflip, AugmentPolicy, MoaConfig, MoaOp,
};
pub use store::{load_pairs, save_pairs, verify_rederivable, PairSet, MANIFEST};

use crate::denoise::DenoiseSetting;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::resample::{resample, Direction, Kernel, ScaleFactor};

/// Whether denoising happens before the son is derived from the father
/// or is applied to father and son separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DenoiseOrder {
    #[default]
    FatherFirst,
    SonAfter,
}

impl fmt::Display for DenoiseOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DenoiseOrder::FatherFirst => "father-first",
            DenoiseOrder::SonAfter => "son-after",
        })
    }
}

impl FromStr for DenoiseOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "father-first" => Ok(DenoiseOrder::FatherFirst),
            "son-after" => Ok(DenoiseOrder::SonAfter),
            other => Err(Error::InvalidArgument(format!(
                "bad denoise order `{other}` (expected father-first or son-after)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSetSpec {
    pub scale: ScaleFactor,
    pub kernel: Kernel,
    pub antialias: bool,
    pub denoise: DenoiseSetting,
    pub denoise_order: DenoiseOrder,
    pub seed: u64,
    /// Smallest son side, in pixels, an input must yield.
    pub min_patch: usize,
}

impl Default for PairSetSpec {
    fn default() -> Self {
        Self {
            scale: ScaleFactor::X2,
            kernel: Kernel::BICUBIC,
            antialias: true,
            denoise: DenoiseSetting::Off,
            denoise_order: DenoiseOrder::FatherFirst,
            seed: 0,
            min_patch: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPair {
    pub source_id: String,
    pub father: Image,
    pub son: Image,
    pub scale: ScaleFactor,
    /// Noise level used when the father was denoised.
    pub sigma: Option<f64>,
}

/// The son of `father` under `spec`, on the 8-bit grid.
pub fn derive_son(father: &Image, spec: &PairSetSpec) -> Result<Image> {
    Ok(resample(father, spec.scale, &spec.kernel, Direction::Down, spec.antialias)?.quantized())
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "image id `{id}` must be non-empty ASCII letters, digits, '-', '_' or '.'"
        )))
    }
}

/// Builds one pair per input. Fathers and sons are snapped to the 8-bit
/// grid so a stored set reloads exactly. Output is sorted by id.
pub fn build_pairs(spec: &PairSetSpec, inputs: &[(String, Image)]) -> Result<Vec<PseudoPair>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no input images".into()));
    }
    let mut ids: Vec<&str> = inputs.iter().map(|(id, _)| id.as_str()).collect();
    ids.iter().try_for_each(|id| check_id(id))?;
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!("duplicate image id `{}`", w[0])));
    }
    let min_side = (spec.scale.value() * spec.min_patch as f64).ceil() as usize;
    for (id, img) in inputs {
        if img.height() < min_side || img.width() < min_side {
            return Err(Error::TooSmall(format!(
                "`{id}` is {}x{}; scale {} needs at least {min_side}x{min_side}",
                img.height(),
                img.width(),
                spec.scale
            )));
        }
    }

    let mut pairs = inputs
        .par_iter()
        .map(|(id, img)| {
            let (father, son, sigma) = match spec.denoise_order {
                DenoiseOrder::FatherFirst => {
                    let (father, sigma) = spec.denoise.apply(img)?;
                    let father = father.quantized();
                    let son = derive_son(&father, spec)?;
                    (father, son, sigma)
                }
                DenoiseOrder::SonAfter => {
                    let raw_son = resample(img, spec.scale, &spec.kernel, Direction::Down, spec.antialias)?;
                    let (father, sigma) = spec.denoise.apply(img)?;
                    let (son, _) = match sigma {
                        Some(s) => DenoiseSetting::Sigma(s).apply(&raw_son)?,
                        None => (raw_son, None),
                    };
                    (father.quantized(), son.quantized(), sigma)
                }
            };
            Ok(PseudoPair {
                source_id: id.clone(),
                father,
                son,
                scale: spec.scale,
                sigma,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    pairs.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    Ok(pairs)
}

/// Aligned crops: a `lr_patch` square of the son and the matching
/// `s * lr_patch` square of the father.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub son: Image,
    pub father: Image,
}

pub(crate) fn integer_scale(s: ScaleFactor) -> Result<usize> {
    s.as_integer()
        .map(|s| s as usize)
        .ok_or_else(|| Error::InvalidArgument(format!("scale {s} is not an integer")))
}

/// Son offset `(y, x)` maps to father offset `(s y, s x)`.
pub fn crop_pair(pair: &PseudoPair, lr_patch: usize, y: usize, x: usize) -> Result<PatchPair> {
    let s = integer_scale(pair.scale)?;
    let son = pair.son.crop(y, x, lr_patch, lr_patch)?;
    let father = pair.father.crop(s * y, s * x, s * lr_patch, s * lr_patch)?;
    Ok(PatchPair { son, father })
}

pub fn sample_patch(pair: &PseudoPair, lr_patch: usize, rng: &mut impl Rng) -> Result<PatchPair> {
    let (h, w) = pair.son.dims();
    if lr_patch == 0 || lr_patch > h || lr_patch > w {
        return Err(Error::TooSmall(format!(
            "patch {lr_patch} does not fit son {h}x{w} of `{}`",
            pair.source_id
        )));
    }
    let y = rng.gen_range(0..=h - lr_patch);
    let x = rng.gen_range(0..=w - lr_patch);
    crop_pair(pair, lr_patch, y, x)
}
