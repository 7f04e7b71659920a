//! Separable resampling: the `down_{s,k}` operator that turns an LR father
//! into its son, and the matching upsampler used as the bicubic baseline.
//!
//! Conventions:
//! - output pixel centres map to `src = (dst + 0.5) * (in / out) - 0.5`;
//! - borders reflect without repeating the edge sample;
//! - when downsampling by a non-integer factor the leftover source pixels
//!   beyond `round(out * s)` are cropped;
//! - with antialiasing the kernel is stretched by the scale ratio;
//! - weights of every output pixel are renormalised to sum to one.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// Keys cubic convolution with free parameter `a` (`-0.5` is "bicubic").
    KeysCubic { a: f64 },
    Box,
    Gaussian { sigma: f64 },
}

impl Kernel {
    pub const BICUBIC: Kernel = Kernel::KeysCubic { a: -0.5 };

    pub fn support(&self) -> f64 {
        match *self {
            Kernel::KeysCubic { .. } => 2.0,
            Kernel::Box => 0.5,
            Kernel::Gaussian { sigma } => 3.0 * sigma,
        }
    }

    pub fn weight(&self, x: f64) -> f64 {
        kernel_weight(self, x)
    }
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::BICUBIC
    }
}

/// Evaluates the kernel's weight function at offset `x` (in source pixels).
pub fn kernel_weight(k: &Kernel, x: f64) -> f64 {
    let t = x.abs();
    match *k {
        Kernel::KeysCubic { a } => {
            if t <= 1.0 {
                ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
            } else if t <= 2.0 {
                ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
            } else {
                0.0
            }
        }
        Kernel::Box => {
            if t < 0.5 {
                1.0
            } else if t == 0.5 {
                0.5
            } else {
                0.0
            }
        }
        Kernel::Gaussian { sigma } => {
            if t <= 3.0 * sigma {
                (-0.5 * (t / sigma).powi(2)).exp()
            } else {
                0.0
            }
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::KeysCubic { a } => write!(f, "keys:{a}"),
            Kernel::Box => write!(f, "box"),
            Kernel::Gaussian { sigma } => write!(f, "gauss:{sigma}"),
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    /// Accepts `keys:<a>` (or bare `keys` / `bicubic`), `box` and `gauss:<sigma>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown kernel `{s}` (try keys:-0.5, box, gauss:1.2)"));
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            let v: f64 = a.ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad())
            }
        };
        match name.trim() {
            "keys" | "bicubic" => Ok(Kernel::KeysCubic {
                a: if arg.is_some() { num(arg)? } else { -0.5 },
            }),
            "box" if arg.is_none() => Ok(Kernel::Box),
            "gauss" | "gaussian" => {
                let sigma = num(arg)?;
                if sigma <= 0.0 {
                    return Err(Error::InvalidArgument(format!("gaussian sigma must be > 0, got {sigma}")));
                }
                Ok(Kernel::Gaussian { sigma })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ScaleFactor(f64);

impl ScaleFactor {
    pub const X2: ScaleFactor = ScaleFactor(2.0);
    pub const X3: ScaleFactor = ScaleFactor(3.0);
    pub const X4: ScaleFactor = ScaleFactor(4.0);

    pub fn new(s: f64) -> Result<Self> {
        if s.is_finite() && s >= 1.0 {
            Ok(ScaleFactor(s))
        } else {
            Err(Error::InvalidArgument(format!("scale factor must be >= 1, got {s}")))
        }
    }

    pub fn integer(s: u32) -> Result<Self> {
        Self::new(s as f64)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `Some(n)` when the factor is a whole number.
    pub fn as_integer(self) -> Option<u32> {
        (self.0.fract() == 0.0).then_some(self.0 as u32)
    }
}

impl fmt::Display for ScaleFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
}

pub fn output_len(len: usize, s: ScaleFactor, dir: Direction) -> usize {
    match dir {
        Direction::Down => (len as f64 / s.0).floor() as usize,
        Direction::Up => (len as f64 * s.0).round() as usize,
    }
}

/// Reflect-without-repeat: `-1 -> 1`, `n -> n - 2`.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Sparse 1-D resampling matrix: for each output index, the (reflected)
/// source indices and their normalised weights.
#[derive(Debug, Clone)]
pub struct AxisWeights {
    in_len: usize,
    out_len: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl AxisWeights {
    pub fn new(in_len: usize, s: ScaleFactor, k: &Kernel, dir: Direction, antialias: bool) -> Result<Self> {
        let out_len = output_len(in_len, s, dir);
        if out_len == 0 {
            return Err(Error::TooSmall(format!(
                "resampling {in_len} px by 1/{} gives an empty axis",
                s.0
            )));
        }
        // Source extent actually covered by the output grid.
        let extent = match dir {
            Direction::Down => ((out_len as f64 * s.0).round() as usize).min(in_len),
            Direction::Up => in_len,
        };
        let ratio = extent as f64 / out_len as f64;
        let stretch = if antialias && dir == Direction::Down {
            ratio.max(1.0)
        } else {
            1.0
        };
        let support = k.support() * stretch;

        let mut offsets = Vec::with_capacity(out_len + 1);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for dst in 0..out_len {
            let center = (dst as f64 + 0.5) * ratio - 0.5;
            let lo = (center - support).ceil() as isize;
            let hi = (center + support).floor() as isize;
            let start = weights.len();
            for i in lo..=hi {
                let w = k.weight((i as f64 - center) / stretch);
                if w != 0.0 {
                    indices.push(reflect(i, extent));
                    weights.push(w);
                }
            }
            let sum: f64 = weights[start..].iter().sum();
            if sum.abs() < 1e-12 {
                // Degenerate kernel/scale combination: fall back to nearest.
                indices.truncate(start);
                weights.truncate(start);
                indices.push(reflect(center.round() as isize, extent));
                weights.push(1.0);
            } else {
                weights[start..].iter_mut().for_each(|w| *w /= sum);
            }
            offsets.push(weights.len());
        }
        Ok(Self {
            in_len,
            out_len,
            offsets,
            indices,
            weights,
        })
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    #[inline]
    fn taps(&self, dst: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[dst]..self.offsets[dst + 1];
        self.indices[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }
}

/// A full 2-D separable resampling operator for a fixed input size.
#[derive(Debug, Clone)]
pub struct ResamplePlan {
    rows: AxisWeights,
    cols: AxisWeights,
}

impl ResamplePlan {
    pub fn new(
        height: usize,
        width: usize,
        s: ScaleFactor,
        k: &Kernel,
        dir: Direction,
        antialias: bool,
    ) -> Result<Self> {
        Ok(Self {
            rows: AxisWeights::new(height, s, k, dir, antialias)?,
            cols: AxisWeights::new(width, s, k, dir, antialias)?,
        })
    }

    pub fn bicubic_up(height: usize, width: usize, s: ScaleFactor) -> Result<Self> {
        Self::new(height, width, s, &Kernel::BICUBIC, Direction::Up, false)
    }

    pub fn in_dims(&self) -> (usize, usize) {
        (self.rows.in_len, self.cols.in_len)
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.rows.out_len, self.cols.out_len)
    }

    /// Resamples one plane (row pass, then column pass).
    pub fn apply_plane<T: Real>(&self, src: &[T], dst: &mut [T]) {
        let (ih, iw) = self.in_dims();
        let (oh, ow) = self.out_dims();
        debug_assert_eq!(src.len(), ih * iw);
        debug_assert_eq!(dst.len(), oh * ow);

        let mut tmp = vec![0f64; ih * ow];
        for (y, row) in tmp.chunks_exact_mut(ow).enumerate() {
            let line = &src[y * iw..(y + 1) * iw];
            for (x, out) in row.iter_mut().enumerate() {
                *out = self.cols.taps(x).map(|(i, w)| w * line[i].as_f64()).sum();
            }
        }
        let mut acc = vec![0f64; ow];
        for (y, out_row) in dst.chunks_exact_mut(ow).enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (i, w) in self.rows.taps(y) {
                for (a, &t) in acc.iter_mut().zip(&tmp[i * ow..(i + 1) * ow]) {
                    *a += w * t;
                }
            }
            for (o, &a) in out_row.iter_mut().zip(&acc) {
                *o = T::from_f64(a);
            }
        }
    }

    /// Transpose of [`apply_plane`](Self::apply_plane): scatters an
    /// output-space gradient back onto the input grid.
    pub fn adjoint_plane<T: Real>(&self, grad_out: &[T], grad_in: &mut [T]) {
        let (ih, iw) = self.in_dims();
        let (oh, ow) = self.out_dims();
        debug_assert_eq!(grad_out.len(), oh * ow);
        debug_assert_eq!(grad_in.len(), ih * iw);

        let mut tmp = vec![0f64; ih * ow];
        for (y, g_row) in grad_out.chunks_exact(ow).enumerate() {
            for (i, w) in self.rows.taps(y) {
                for (t, &g) in tmp[i * ow..(i + 1) * ow].iter_mut().zip(g_row) {
                    *t += w * g.as_f64();
                }
            }
        }
        let mut acc = vec![0f64; iw];
        for (y, gi_row) in grad_in.chunks_exact_mut(iw).enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (x, &t) in tmp[y * ow..(y + 1) * ow].iter().enumerate() {
                for (i, w) in self.cols.taps(x) {
                    acc[i] += w * t;
                }
            }
            for (g, &a) in gi_row.iter_mut().zip(&acc) {
                *g = T::from_f64(a);
            }
        }
    }

    pub fn apply(&self, img: &Image) -> Result<Image> {
        if img.dims() != self.in_dims() {
            return Err(Error::ShapeMismatch(format!(
                "plan expects {:?}, image is {:?}",
                self.in_dims(),
                img.dims()
            )));
        }
        let (oh, ow) = self.out_dims();
        let planes: Vec<Vec<f32>> = (0..img.channels())
            .into_par_iter()
            .map(|c| {
                let mut out = vec![0f32; oh * ow];
                self.apply_plane(img.plane(c), &mut out);
                out
            })
            .collect();
        Image::new(img.channels(), oh, ow, planes.concat())
    }
}

pub fn resample(img: &Image, s: ScaleFactor, k: &Kernel, dir: Direction, antialias: bool) -> Result<Image> {
    if img.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("resample input".into()));
    }
    ResamplePlan::new(img.height(), img.width(), s, k, dir, antialias)?.apply(img)
}

/// `down_{s,k}` with antialiasing, the son-generation operator.
pub fn downsample(img: &Image, s: ScaleFactor, k: &Kernel) -> Result<Image> {
    resample(img, s, k, Direction::Down, true)
}

pub fn bicubic_upsample(img: &Image, s: ScaleFactor) -> Result<Image> {
    resample(img, s, &Kernel::BICUBIC, Direction::Up, false)
}
