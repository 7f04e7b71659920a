//! Patch augmentation: flips and quarter turns applied identically to son
//! and father, plus a mixture of photometric ops where exactly one op is
//! drawn per patch.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::PatchPair;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::resample::{bicubic_upsample, resample, Direction, Kernel, ScaleFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoaOp {
    Blend,
    Cutblur,
    Cutout,
    RgbPermute,
    Mixup,
}

impl MoaOp {
    pub const ALL: [MoaOp; 5] = [MoaOp::Blend, MoaOp::Cutblur, MoaOp::Cutout, MoaOp::RgbPermute, MoaOp::Mixup];
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoaConfig {
    /// Chance that any photometric op is applied to a patch.
    pub prob: f64,
    /// Candidates, drawn uniformly.
    pub ops: Vec<MoaOp>,
    /// Blend keeps `alpha ~ U(lo, hi)` of the patch.
    pub blend_alpha: (f64, f64),
    /// Cutblur box side as a fraction of the patch side, `U(lo, hi)`.
    pub cutblur_ratio: (f64, f64),
    /// Cutout box side as a fraction of the son patch side.
    pub cutout_ratio: f64,
    /// Mixup weight `lambda ~ Beta(a, a)`.
    pub mixup_alpha: f64,
}

impl Default for MoaConfig {
    fn default() -> Self {
        Self {
            prob: 1.0,
            ops: MoaOp::ALL.to_vec(),
            blend_alpha: (0.6, 1.0),
            cutblur_ratio: (0.25, 0.5),
            cutout_ratio: 0.25,
            mixup_alpha: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPolicy {
    pub hflip: f64,
    pub vflip: f64,
    pub rot90: f64,
    pub moa: Option<MoaConfig>,
}

impl AugmentPolicy {
    pub fn off() -> Self {
        Self {
            hflip: 0.0,
            vflip: 0.0,
            rot90: 0.0,
            moa: None,
        }
    }

    pub fn geometric() -> Self {
        Self {
            hflip: 0.5,
            vflip: 0.5,
            rot90: 0.5,
            moa: None,
        }
    }

    pub fn moa() -> Self {
        Self {
            moa: Some(MoaConfig::default()),
            ..Self::geometric()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.hflip == 0.0 && self.vflip == 0.0 && self.rot90 == 0.0 && self.moa.as_ref().is_none_or(|m| m.prob == 0.0)
    }

    pub fn uses_mixup(&self) -> bool {
        self.moa
            .as_ref()
            .is_some_and(|m| m.prob > 0.0 && m.ops.contains(&MoaOp::Mixup))
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} probability {p} is outside [0, 1]")))
            }
        };
        unit("hflip", self.hflip)?;
        unit("vflip", self.vflip)?;
        unit("rot90", self.rot90)?;
        if let Some(m) = &self.moa {
            unit("moa", m.prob)?;
            if m.ops.is_empty() && m.prob > 0.0 {
                return Err(Error::InvalidArgument("mixture of augmentations has no ops".into()));
            }
            let (lo, hi) = m.blend_alpha;
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::InvalidArgument("blend alpha range".into()));
            }
            let (lo, hi) = m.cutblur_ratio;
            if !(0.0 < lo && lo <= hi && hi <= 1.0) || !(0.0..=1.0).contains(&m.cutout_ratio) || m.mixup_alpha <= 0.0 {
                return Err(Error::InvalidArgument("augmentation strength out of range".into()));
            }
        }
        Ok(())
    }
}

/// Preset names: `off`, `geo`, `moa`.
impl FromStr for AugmentPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "off" => Ok(Self::off()),
            "geo" => Ok(Self::geometric()),
            "moa" => Ok(Self::moa()),
            other => Err(Error::InvalidArgument(format!(
                "bad augmentation preset `{other}` (expected off, geo or moa)"
            ))),
        }
    }
}

impl fmt::Display for AugmentPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::off() {
            f.write_str("off")
        } else if *self == Self::geometric() {
            f.write_str("geo")
        } else if *self == Self::moa() {
            f.write_str("moa")
        } else {
            f.write_str("custom")
        }
    }
}

fn remap(img: &Image, h: usize, w: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Image {
    let c = img.channels();
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = src(y, x);
                data.push(img.get(ch, sy, sx));
            }
        }
    }
    Image::from_parts(c, h, w, data)
}

pub fn hflip(img: &Image) -> Image {
    let (h, w) = img.dims();
    remap(img, h, w, |y, x| (y, w - 1 - x))
}

pub fn vflip(img: &Image) -> Image {
    let (h, w) = img.dims();
    remap(img, h, w, |y, x| (h - 1 - y, x))
}

/// Quarter turn counter-clockwise.
pub fn rot90(img: &Image) -> Image {
    let (h, w) = img.dims();
    remap(img, w, h, |y, x| (x, w - 1 - y))
}

fn both(p: &PatchPair, f: impl Fn(&Image) -> Image) -> PatchPair {
    PatchPair {
        son: f(&p.son),
        father: f(&p.father),
    }
}

/// `alpha * patch + (1 - alpha) * color` on son and father alike.
pub fn blend(p: &PatchPair, alpha: f32, color: &[f32]) -> Result<PatchPair> {
    if color.len() != p.son.channels() {
        return Err(Error::ShapeMismatch("blend color has the wrong channel count".into()));
    }
    let mix = |img: &Image| {
        let plane = img.height() * img.width();
        let data = img
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| alpha * v + (1.0 - alpha) * color[i / plane])
            .collect();
        Image::from_parts(img.channels(), img.height(), img.width(), data)
    };
    Ok(both(p, mix))
}

/// `lambda * a + (1 - lambda) * b` with the same weight for son and father.
pub fn mixup(a: &PatchPair, b: &PatchPair, lambda: f32) -> Result<PatchPair> {
    if !a.son.same_shape(&b.son) || !a.father.same_shape(&b.father) {
        return Err(Error::ShapeMismatch("mixup partners differ in shape".into()));
    }
    let mix = |x: &Image, y: &Image| {
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&u, &v)| lambda * u + (1.0 - lambda) * v)
            .collect();
        Image::from_parts(x.channels(), x.height(), x.width(), data)
    };
    Ok(PatchPair {
        son: mix(&a.son, &b.son),
        father: mix(&a.father, &b.father),
    })
}

/// Applies one channel permutation to both patches.
pub fn rgb_permute(p: &PatchPair, perm: &[usize]) -> Result<PatchPair> {
    let c = p.son.channels();
    let mut seen = vec![false; c];
    if perm.len() != c || perm.iter().any(|&i| i >= c || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation of {c} channels")));
    }
    let apply = |img: &Image| {
        let data = perm.iter().flat_map(|&i| img.plane(i).iter().copied()).collect();
        Image::from_parts(c, img.height(), img.width(), data)
    };
    Ok(both(p, apply))
}

fn paste(dst: &Image, src: &Image, y: usize, x: usize) -> Image {
    let (h, w) = dst.dims();
    let (sh, sw) = src.dims();
    let mut data = dst.data().to_vec();
    for c in 0..dst.channels() {
        for yy in 0..sh {
            for xx in 0..sw {
                data[(c * h + y + yy) * w + x + xx] = src.get(c, yy, xx);
            }
        }
    }
    Image::from_parts(dst.channels(), h, w, data)
}

/// Zeroes a `side`-sized square of the son at `(y, x)`; the father is kept.
pub fn cutout(p: &PatchPair, y: usize, x: usize, side: usize) -> Result<PatchPair> {
    if side == 0 {
        return Ok(p.clone());
    }
    if y + side > p.son.height() || x + side > p.son.width() {
        return Err(Error::InvalidArgument("cutout box outside the patch".into()));
    }
    let hole = Image::filled(p.son.channels(), side, side, 0.0)?;
    Ok(PatchPair {
        son: paste(&p.son, &hole, y, x),
        father: p.father.clone(),
    })
}

/// Swaps resolution inside a son-space box `(y, x, side)`. With `into_father`
/// the bicubic-upsampled son box replaces the father box; otherwise the
/// father box, decimated without a low-pass, replaces the son box.
pub fn cutblur(p: &PatchPair, y: usize, x: usize, side: usize, into_father: bool) -> Result<PatchPair> {
    let s = p.father.height() / p.son.height().max(1);
    if s < 1 || p.son.height() * s != p.father.height() || p.son.width() * s != p.father.width() {
        return Err(Error::InvalidArgument("cutblur needs an integer scale".into()));
    }
    if side == 0 {
        return Ok(p.clone());
    }
    if y + side > p.son.height() || x + side > p.son.width() {
        return Err(Error::InvalidArgument("cutblur box outside the patch".into()));
    }
    let scale = ScaleFactor::integer(s as u32)?;
    if into_father {
        let up = bicubic_upsample(&p.son.crop(y, x, side, side)?, scale)?;
        Ok(PatchPair {
            son: p.son.clone(),
            father: paste(&p.father, &up, s * y, s * x),
        })
    } else {
        let region = p.father.crop(s * y, s * x, s * side, s * side)?;
        let down = resample(&region, scale, &Kernel::BICUBIC, Direction::Down, false)?;
        Ok(PatchPair {
            son: paste(&p.son, &down, y, x),
            father: p.father.clone(),
        })
    }
}

/// Draws and applies the policy. `partner` feeds mixup; without one a
/// mixup draw leaves the patch as is.
pub fn augment(p: &PatchPair, policy: &AugmentPolicy, rng: &mut impl Rng, partner: Option<&PatchPair>) -> Result<PatchPair> {
    let mut out = p.clone();
    if rng.gen_bool(policy.hflip) {
        out = both(&out, hflip);
    }
    if rng.gen_bool(policy.vflip) {
        out = both(&out, vflip);
    }
    if rng.gen_bool(policy.rot90) {
        out = both(&out, rot90);
    }
    let Some(moa) = &policy.moa else { return Ok(out) };
    if moa.ops.is_empty() || !rng.gen_bool(moa.prob) {
        return Ok(out);
    }
    let side = out.son.height().min(out.son.width());
    let op = *moa.ops.choose(rng).expect("non-empty");
    match op {
        MoaOp::Blend => {
            let (lo, hi) = moa.blend_alpha;
            let alpha = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let color: Vec<f32> = (0..out.son.channels()).map(|_| rng.gen::<f32>()).collect();
            blend(&out, alpha as f32, &color)
        }
        MoaOp::Cutblur => {
            let (lo, hi) = moa.cutblur_ratio;
            let r = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let box_side = ((side as f64 * r).round() as usize).clamp(1, side);
            let y = rng.gen_range(0..=out.son.height() - box_side);
            let x = rng.gen_range(0..=out.son.width() - box_side);
            let into_father = rng.gen_bool(0.5);
            cutblur(&out, y, x, box_side, into_father)
        }
        MoaOp::Cutout => {
            let box_side = ((side as f64 * moa.cutout_ratio).round() as usize).min(side);
            let y = rng.gen_range(0..=out.son.height() - box_side);
            let x = rng.gen_range(0..=out.son.width() - box_side);
            cutout(&out, y, x, box_side)
        }
        MoaOp::RgbPermute => {
            let mut perm: Vec<usize> = (0..out.son.channels()).collect();
            perm.shuffle(rng);
            rgb_permute(&out, &perm)
        }
        MoaOp::Mixup => {
            let lambda = Beta::new(moa.mixup_alpha, moa.mixup_alpha)
                .map_err(|e| Error::InvalidArgument(format!("mixup alpha: {e}")))?
                .sample(rng);
            match partner {
                Some(b) => mixup(&out, b, lambda as f32),
                None => Ok(out),
            }
        }
    }
}
