//! Block-matching collaborative hard-thresholding (the first stage of BM3D).
//!
//! For every reference block on a stride grid, the most similar blocks in a
//! local search window are stacked into a 3-D group, transformed (2-D DCT per
//! block, normalised Walsh-Hadamard along the stack), hard-thresholded at
//! `hard_threshold * sigma`, inverted, and aggregated back with weights
//! inversely proportional to the number of retained coefficients.
//!
//! Colour images are rotated into an orthonormal opponent space (luma plus
//! two chroma planes, noise level unchanged); grouping is decided on luma and
//! shared by the chroma planes.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    /// Noise standard deviation in `[0, 1]` intensity units.
    pub sigma: f64,
    pub block: usize,
    pub search_window: usize,
    pub max_matches: usize,
    /// Threshold as a multiple of `sigma`.
    pub hard_threshold: f64,
    /// Reference-block grid spacing.
    pub stride: usize,
    /// Maximum mean squared block difference for a candidate to join a group.
    pub match_threshold: f64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            block: 8,
            search_window: 21,
            max_matches: 16,
            hard_threshold: 2.7,
            stride: 3,
            match_threshold: 2500.0 / (255.0 * 255.0),
        }
    }
}

impl DenoiseConfig {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if self.block == 0 || self.block > self.search_window {
            return bad(format!(
                "block ({}) must be in 1..=search_window ({})",
                self.block, self.search_window
            ));
        }
        if self.max_matches == 0 || self.stride == 0 {
            return bad("max_matches and stride must be >= 1".into());
        }
        if [self.hard_threshold, self.match_threshold].iter().any(|t| t.is_nan() || *t < 0.0) {
            return bad("thresholds must be >= 0".into());
        }
        Ok(())
    }
}

/// How (and whether) to denoise before super-resolving.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DenoiseSetting {
    #[default]
    Off,
    /// Estimate sigma per image with [`estimate_sigma`].
    Auto,
    Sigma(f64),
}

impl DenoiseSetting {
    /// Denoises `img` according to the setting and returns the sigma used
    /// (`None` when off).
    pub fn apply(&self, img: &Image) -> Result<(Image, Option<f64>)> {
        let sigma = match *self {
            DenoiseSetting::Off => return Ok((img.clone(), None)),
            DenoiseSetting::Auto => estimate_sigma(img)?,
            DenoiseSetting::Sigma(s) => s,
        };
        let out = denoise(img, &DenoiseConfig::with_sigma(sigma))?;
        Ok((out, Some(sigma)))
    }
}

impl fmt::Display for DenoiseSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiseSetting::Off => f.write_str("off"),
            DenoiseSetting::Auto => f.write_str("auto"),
            DenoiseSetting::Sigma(s) => write!(f, "sigma={s}"),
        }
    }
}

impl FromStr for DenoiseSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "off" | "none" => Ok(DenoiseSetting::Off),
            "auto" => Ok(DenoiseSetting::Auto),
            _ => {
                let v = s
                    .strip_prefix("sigma=")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "bad denoise setting `{s}` (expected off, auto or sigma=<v>)"
                        ))
                    })?;
                Ok(DenoiseSetting::Sigma(v))
            }
        }
    }
}

/// Noise level from the median absolute 2x2 Haar diagonal detail,
/// `median(|d|) / 0.6745`.
pub fn estimate_sigma(img: &Image) -> Result<f64> {
    let (h, w) = img.dims();
    if h < 16 || w < 16 {
        return Err(Error::TooSmall(format!("sigma estimation needs >= 16x16, got {h}x{w}")));
    }
    let mut details = Vec::with_capacity(img.channels() * (h / 2) * (w / 2));
    for c in 0..img.channels() {
        let p = img.plane(c);
        for y in (0..h - 1).step_by(2) {
            for x in (0..w - 1).step_by(2) {
                let (a, b) = (p[y * w + x] as f64, p[y * w + x + 1] as f64);
                let (cc, d) = (p[(y + 1) * w + x] as f64, p[(y + 1) * w + x + 1] as f64);
                details.push(((a - b - cc + d) * 0.5).abs());
            }
        }
    }
    let mid = details.len() / 2;
    let (_, m, _) = details.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(*m / 0.6745)
}

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn to_opponent(img: &Image) -> Vec<Vec<f64>> {
    if !img.is_rgb() {
        return vec![img.plane(0).iter().map(|&v| v as f64).collect()];
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let s3 = 1.0 / 3f64.sqrt();
    let s6 = 1.0 / 6f64.sqrt();
    let n = r.len();
    let mut y = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for i in 0..n {
        let (r, g, b) = (r[i] as f64, g[i] as f64, b[i] as f64);
        y[i] = (r + g + b) * s3;
        u[i] = (r - b) * INV_SQRT2;
        v[i] = (r - 2.0 * g + b) * s6;
    }
    vec![y, u, v]
}

fn from_opponent(planes: &[Vec<f64>]) -> Vec<f32> {
    if planes.len() == 1 {
        return planes[0].iter().map(|&v| v as f32).collect();
    }
    let s3 = 1.0 / 3f64.sqrt();
    let s6 = 1.0 / 6f64.sqrt();
    let n = planes[0].len();
    let mut out = vec![0f32; 3 * n];
    for i in 0..n {
        let (y, u, v) = (planes[0][i], planes[1][i], planes[2][i]);
        out[i] = (y * s3 + u * INV_SQRT2 + v * s6) as f32;
        out[n + i] = (y * s3 - 2.0 * v * s6) as f32;
        out[2 * n + i] = (y * s3 - u * INV_SQRT2 + v * s6) as f32;
    }
    out
}

/// Orthonormal DCT-II basis, `basis[k * n + i]`.
fn dct_basis(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            m[k * n + i] =
                scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
        }
    }
    m
}

/// `out = D x D^T` (forward) or `D^T x D` (inverse) for a `b x b` block.
fn dct2(basis: &[f64], b: usize, x: &[f64], out: &mut [f64], inverse: bool, tmp: &mut [f64]) {
    let at = |k: usize, i: usize| if inverse { basis[i * b + k] } else { basis[k * b + i] };
    // rows: tmp[r][k] = sum_i x[r][i] * D[k][i]
    for r in 0..b {
        for k in 0..b {
            tmp[r * b + k] = (0..b).map(|i| x[r * b + i] * at(k, i)).sum();
        }
    }
    for k in 0..b {
        for c in 0..b {
            out[k * b + c] = (0..b).map(|r| at(k, r) * tmp[r * b + c]).sum();
        }
    }
}

/// In-place normalised Walsh-Hadamard transform over `n` (a power of two)
/// vectors of length `len`, stored back to back. Self-inverse.
fn walsh_hadamard(data: &mut [f64], n: usize, len: usize) {
    let mut h = 1;
    while h < n {
        for start in (0..n).step_by(2 * h) {
            for j in start..start + h {
                for e in 0..len {
                    let a = data[j * len + e];
                    let b = data[(j + h) * len + e];
                    data[j * len + e] = a + b;
                    data[(j + h) * len + e] = a - b;
                }
            }
        }
        h *= 2;
    }
    let norm = 1.0 / (n as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= norm);
}

fn grid(len: usize, block: usize, stride: usize) -> Vec<usize> {
    let last = len - block;
    let mut g: Vec<usize> = (0..=last).step_by(stride).collect();
    if *g.last().unwrap() != last {
        g.push(last);
    }
    g
}

struct Group {
    positions: Vec<(usize, usize)>,
    /// Per plane: estimated blocks back to back, then the aggregation weight.
    blocks: Vec<(Vec<f64>, f64)>,
}

pub fn denoise(img: &Image, cfg: &DenoiseConfig) -> Result<Image> {
    cfg.validate()?;
    if cfg.sigma == 0.0 {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    let b = cfg.block;
    if h < b || w < b {
        return Err(Error::TooSmall(format!("{h}x{w} image is smaller than the {b}x{b} block")));
    }

    let planes = to_opponent(img);
    let luma = &planes[0];
    let basis = dct_basis(b);
    let threshold = cfg.hard_threshold * cfg.sigma;
    let half = (cfg.search_window / 2) as isize;
    let refs: Vec<(usize, usize)> = grid(h, b, cfg.stride)
        .into_iter()
        .flat_map(|y| grid(w, b, cfg.stride).into_iter().map(move |x| (y, x)))
        .collect();

    let block_dist = |(ry, rx): (usize, usize), (cy, cx): (usize, usize)| -> f64 {
        let mut d = 0.0;
        for i in 0..b {
            let r = &luma[(ry + i) * w + rx..(ry + i) * w + rx + b];
            let c = &luma[(cy + i) * w + cx..(cy + i) * w + cx + b];
            d += r.iter().zip(c).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        }
        d / (b * b) as f64
    };

    let process = |&(ry, rx): &(usize, usize)| -> Group {
        let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize) as usize;
        let (y0, y1) = (clamp(ry as isize - half, h - b), clamp(ry as isize + half, h - b));
        let (x0, x1) = (clamp(rx as isize - half, w - b), clamp(rx as isize + half, w - b));
        let mut cands: Vec<(f64, (usize, usize))> = Vec::new();
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                let d = if (cy, cx) == (ry, rx) { 0.0 } else { block_dist((ry, rx), (cy, cx)) };
                if d <= cfg.match_threshold {
                    cands.push((d, (cy, cx)));
                }
            }
        }
        // ties broken by position for run-to-run stability
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut n = cands.len().min(cfg.max_matches);
        n = 1 << (usize::BITS - 1 - n.leading_zeros());
        let positions: Vec<(usize, usize)> = cands[..n].iter().map(|c| c.1).collect();

        let bb = b * b;
        let mut tmp = vec![0.0; bb];
        let mut patch = vec![0.0; bb];
        let blocks = planes
            .iter()
            .map(|plane| {
                let mut stack = vec![0.0; n * bb];
                for (j, &(py, px)) in positions.iter().enumerate() {
                    for i in 0..b {
                        patch[i * b..(i + 1) * b]
                            .copy_from_slice(&plane[(py + i) * w + px..(py + i) * w + px + b]);
                    }
                    dct2(&basis, b, &patch, &mut stack[j * bb..(j + 1) * bb], false, &mut tmp);
                }
                walsh_hadamard(&mut stack, n, bb);
                let mut kept = 0usize;
                for v in stack.iter_mut() {
                    if v.abs() < threshold {
                        *v = 0.0;
                    } else {
                        kept += 1;
                    }
                }
                walsh_hadamard(&mut stack, n, bb);
                let mut out = vec![0.0; n * bb];
                for j in 0..n {
                    patch.copy_from_slice(&stack[j * bb..(j + 1) * bb]);
                    dct2(&basis, b, &patch, &mut out[j * bb..(j + 1) * bb], true, &mut tmp);
                }
                (out, 1.0 / kept.max(1) as f64)
            })
            .collect();
        Group { positions, blocks }
    };

    let mut num: Vec<Vec<f64>> = vec![vec![0.0; h * w]; planes.len()];
    let mut den: Vec<Vec<f64>> = vec![vec![0.0; h * w]; planes.len()];
    // Bounded chunks keep memory flat; aggregation stays in reference order.
    for chunk in refs.chunks(512) {
        let groups: Vec<Group> = chunk.par_iter().map(process).collect();
        for g in &groups {
            for (p, (est, weight)) in g.blocks.iter().enumerate() {
                for (j, &(py, px)) in g.positions.iter().enumerate() {
                    for i in 0..b {
                        let row = (py + i) * w + px;
                        let src = &est[j * b * b + i * b..j * b * b + (i + 1) * b];
                        for (k, &v) in src.iter().enumerate() {
                            num[p][row + k] += weight * v;
                            den[p][row + k] += weight;
                        }
                    }
                }
            }
        }
    }

    let estimate: Vec<Vec<f64>> = num
        .iter()
        .zip(&den)
        .zip(&planes)
        .map(|((n, d), orig)| {
            n.iter()
                .zip(d)
                .zip(orig)
                .map(|((&n, &d), &o)| if d > 0.0 { n / d } else { o })
                .collect()
        })
        .collect();
    let data = from_opponent(&estimate).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Image::new(img.channels(), h, w, data)
}
