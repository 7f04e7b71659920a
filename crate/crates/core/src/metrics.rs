//! PSNR / SSIM and wall-clock latency measurement.
//!
//! Two evaluation protocols are used: Y-channel metrics with a border shave
//! equal to the scale factor for the bicubic track, and RGB metrics without
//! shave for real-world inputs.

use std::fmt;
use std::time::Instant;

use serde::Serialize;

use crate::denoise::DenoiseSetting;
use crate::error::{Error, Result};
use crate::image::{rgb_to_y, shave_border, ColorMode, Image};
use crate::nn::{Checkpoint, ModelConfig};
use crate::train::{infer, train_zssr, ZssrConfig};

/// PSNR in dB with a distinguished value for identical inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Identical,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Identical => None,
        }
    }

    pub fn is_identical(self) -> bool {
        self == Psnr::Identical
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4}"),
            Psnr::Identical => f.write_str("inf"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Identical => s.serialize_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub psnr_db: Psnr,
    pub ssim: f64,
    pub mode: ColorMode,
    pub shave: usize,
    pub latency_ms: Option<f64>,
}

fn prepare(a: &Image, b: &Image, mode: ColorMode, shave: usize) -> Result<(Image, Image)> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )));
    }
    let conv = |img: &Image| -> Result<Image> {
        let img = match mode {
            ColorMode::Y if img.is_rgb() => rgb_to_y(img)?,
            _ => img.clone(),
        };
        shave_border(&img, shave)
    };
    Ok((conv(a)?, conv(b)?))
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch("mse operands differ in shape".into()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak-1.0 PSNR after optional Y conversion and border shave.
pub fn psnr(a: &Image, b: &Image, mode: ColorMode, shave: usize) -> Result<Psnr> {
    let (a, b) = prepare(a, b, mode, shave)?;
    let e = mse(&a, &b)?;
    Ok(if e == 0.0 {
        Psnr::Identical
    } else {
        Psnr::Finite(-10.0 * e.log10())
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Separable "valid" filtering: output is `(h - 10) x (w - 10)`.
fn filter_valid(src: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = win.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (k, &wk) in win.iter().enumerate() {
            let row = &tmp[(y + k) * ow..(y + k + 1) * ow];
            for (o, &t) in out[y * ow..(y + 1) * ow].iter_mut().zip(row) {
                *o += wk * t;
            }
        }
    }
    out
}

fn ssim_plane(a: &[f32], b: &[f32], h: usize, w: usize) -> f64 {
    let win = gaussian_window();
    let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(&a, h, w, &win);
    let mu_b = filter_valid(&b, h, w, &win);
    let aa = filter_valid(&prod(&a, &a), h, w, &win);
    let bb = filter_valid(&prod(&b, &b), h, w, &win);
    let ab = filter_valid(&prod(&a, &b), h, w, &win);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    total / n as f64
}

/// Single-scale SSIM (11x11 Gaussian window, sigma 1.5, K1 = 0.01,
/// K2 = 0.03, peak 1), averaged over valid windows and over channels.
pub fn ssim(a: &Image, b: &Image, mode: ColorMode, shave: usize) -> Result<f64> {
    let (a, b) = prepare(a, b, mode, shave)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::TooSmall(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} after shave, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    let (h, w) = a.dims();
    let sum: f64 = (0..a.channels())
        .map(|c| ssim_plane(a.plane(c), b.plane(c), h, w))
        .sum();
    Ok(sum / a.channels() as f64)
}

pub fn evaluate(sr: &Image, reference: &Image, mode: ColorMode, shave: usize) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr_db: psnr(sr, reference, mode, shave)?,
        ssim: ssim(sr, reference, mode, shave)?,
        mode,
        shave,
        latency_ms: None,
    })
}

/// What to time.
#[derive(Debug, Clone, Copy)]
pub enum BenchJob<'a> {
    /// One forward pass of an offline-trained model.
    SimusrInfer { ckpt: &'a Checkpoint },
    /// Online training on the input followed by inference.
    ZssrFull {
        cfg: &'a ZssrConfig,
        model: &'a ModelConfig,
    },
}

impl BenchJob<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            BenchJob::SimusrInfer { .. } => "simusr_infer",
            BenchJob::ZssrFull { .. } => "zssr_full",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyReport {
    pub job: String,
    pub params_count: usize,
    pub median_ms: f64,
    /// Sample standard deviation of the timed runs (0 for a single run).
    pub std_ms: f64,
    pub runs: Vec<f64>,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Times `job` on `input` with the timed region pinned to one thread.
///
/// Inference gets an untimed warm-up run and needs `repeats >= 3`; the
/// online ZSSR job may run once.
pub fn bench_latency(job: BenchJob<'_>, input: &Image, repeats: usize) -> Result<LatencyReport> {
    let min_repeats = match job {
        BenchJob::SimusrInfer { .. } => 3,
        BenchJob::ZssrFull { .. } => 1,
    };
    if repeats < min_repeats {
        return Err(Error::InvalidArgument(format!(
            "{} needs at least {min_repeats} repeats, got {repeats}",
            job.name()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;

    let (params_count, runs) = pool.install(|| -> Result<(usize, Vec<f64>)> {
        match job {
            BenchJob::SimusrInfer { ckpt } => {
                infer(ckpt, input, &DenoiseSetting::Off)?;
                let mut runs = Vec::with_capacity(repeats);
                for _ in 0..repeats {
                    let t = Instant::now();
                    let out = infer(ckpt, input, &DenoiseSetting::Off)?;
                    runs.push(t.elapsed().as_secs_f64() * 1e3);
                    std::hint::black_box(out);
                }
                Ok((ckpt.param_count(), runs))
            }
            BenchJob::ZssrFull { cfg, model } => {
                let mut runs = Vec::with_capacity(repeats);
                for _ in 0..repeats {
                    let t = Instant::now();
                    let out = train_zssr(input, cfg, model)?;
                    runs.push(t.elapsed().as_secs_f64() * 1e3);
                    std::hint::black_box(out);
                }
                Ok((model.param_count(), runs))
            }
        }
    })?;

    Ok(LatencyReport {
        job: job.name().to_string(),
        params_count,
        median_ms: median(&runs),
        std_ms: std_dev(&runs),
        runs,
    })
}
