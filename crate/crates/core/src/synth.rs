//! Procedural test imagery: piecewise-smooth RGB scenes with antialiased
//! edges at many scales, and additive Gaussian noise.
//!
//! Used by tests and the acceptance harness in place of a benchmark
//! dataset; every output is a deterministic function of its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::Image;

const SUPERSAMPLE: usize = 4;

enum Shape {
    Disc { cx: f64, cy: f64, r: f64 },
    /// Convex polygon as inward-facing half-planes `a x + b y + c >= 0`.
    Convex { edges: Vec<(f64, f64, f64)> },
    Grating { cx: f64, cy: f64, r: f64, nx: f64, ny: f64, period: f64, alt: [f64; 3] },
}

struct Layer {
    shape: Shape,
    color: [f64; 3],
    /// Linear shading across the shape.
    shade: (f64, f64),
    anchor: (f64, f64),
}

impl Layer {
    fn sample(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        let base = match &self.shape {
            Shape::Disc { cx, cy, r } => ((x - cx).powi(2) + (y - cy).powi(2) <= r * r).then_some(self.color),
            Shape::Convex { edges } => edges
                .iter()
                .all(|&(a, b, c)| a * x + b * y + c >= 0.0)
                .then_some(self.color),
            Shape::Grating { cx, cy, r, nx, ny, period, alt } => {
                if (x - cx).powi(2) + (y - cy).powi(2) > r * r {
                    None
                } else {
                    let phase = ((x - cx) * nx + (y - cy) * ny) / period;
                    Some(if phase.rem_euclid(1.0) < 0.5 { self.color } else { *alt })
                }
            }
        }?;
        let s = 1.0 + self.shade.0 * (x - self.anchor.0) + self.shade.1 * (y - self.anchor.1);
        Some(base.map(|v| (v * s).clamp(0.0, 1.0)))
    }
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()].map(|v| 0.05 + 0.9 * v)
}

/// An RGB scene of overlapping discs, polygons and stripe patches over a
/// shaded background.
pub fn scene(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f64, width as f64);
    let extent = hf.min(wf);
    let bg0 = color(&mut rng);
    let bg1 = color(&mut rng);
    let bg_dir = rng.gen::<f64>() * std::f64::consts::TAU;

    let count = 12 + (hf * wf / 900.0).round() as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        // log-uniform sizes so structure appears at every scale
        let size = (2.5f64.ln() + rng.gen::<f64>() * ((0.35 * extent).ln() - 2.5f64.ln())).exp();
        let (cx, cy) = (rng.gen::<f64>() * wf, rng.gen::<f64>() * hf);
        let shape = match rng.gen_range(0..5) {
            0 | 1 => Shape::Disc { cx, cy, r: size },
            2 | 3 => {
                let sides = rng.gen_range(3..=6);
                let rot = rng.gen::<f64>() * std::f64::consts::TAU;
                let pts: Vec<(f64, f64)> = (0..sides)
                    .map(|k| {
                        let t = rot + k as f64 * std::f64::consts::TAU / sides as f64;
                        let rr = size * (0.6 + 0.4 * rng.gen::<f64>());
                        (cx + rr * t.cos(), cy + rr * t.sin())
                    })
                    .collect();
                let edges = (0..sides)
                    .map(|k| {
                        let (x0, y0) = pts[k];
                        let (x1, y1) = pts[(k + 1) % sides];
                        // counter-clockwise vertices: interior on the left
                        let (a, b) = (-(y1 - y0), x1 - x0);
                        (a, b, -(a * x0 + b * y0))
                    })
                    .collect();
                Shape::Convex { edges }
            }
            _ => {
                let t = rng.gen::<f64>() * std::f64::consts::PI;
                Shape::Grating {
                    cx,
                    cy,
                    r: size,
                    nx: t.cos(),
                    ny: t.sin(),
                    period: 2.5 + rng.gen::<f64>() * 6.0,
                    alt: color(&mut rng),
                }
            }
        };
        let g = 0.3 / size.max(4.0);
        layers.push(Layer {
            shape,
            color: color(&mut rng),
            shade: ((rng.gen::<f64>() - 0.5) * g, (rng.gen::<f64>() - 0.5) * g),
            anchor: (cx, cy),
        });
    }

    let (dx, dy) = (bg_dir.cos(), bg_dir.sin());
    let diag = (hf * hf + wf * wf).sqrt();
    let mut data = vec![0f32; 3 * height * width];
    let plane = height * width;
    let n = SUPERSAMPLE as f64;
    for py in 0..height {
        for px in 0..width {
            let mut acc = [0.0; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 + (sx as f64 + 0.5) / n;
                    let y = py as f64 + (sy as f64 + 0.5) / n;
                    let t = 0.5 + ((x - wf / 2.0) * dx + (y - hf / 2.0) * dy) / diag;
                    let mut c = [0.0; 3];
                    for k in 0..3 {
                        c[k] = bg0[k] * (1.0 - t) + bg1[k] * t;
                    }
                    for layer in &layers {
                        if let Some(v) = layer.sample(x, y) {
                            c = v;
                        }
                    }
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for k in 0..3 {
                data[k * plane + py * width + px] = (acc[k] / (n * n)) as f32;
            }
        }
    }
    Image::from_parts(3, height, width, data)
}

/// Adds iid `N(0, sigma^2)` noise; `clamp` keeps the result in `[0, 1]`
/// as an 8-bit capture would.
pub fn add_gaussian_noise(img: &Image, sigma: f64, seed: u64, clamp: bool) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("sigma is finite");
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let n = v as f64 + normal.sample(&mut rng);
            (if clamp { n.clamp(0.0, 1.0) } else { n }) as f32
        })
        .collect();
    Image::from_parts(img.channels(), img.height(), img.width(), data)
}
