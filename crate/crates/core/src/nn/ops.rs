//! Forward and backward kernels. Every function here is pure; the tape in
//! [`super::tape`] wires them into a reverse-mode graph.
//!
//! Convolutions are im2col + GEMM over fixed-size pixel tiles. Tiles and
//! batch elements may run in parallel, but every reduction is summed in a
//! fixed order so results do not depend on the thread count.

use rayon::prelude::*;

use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::resample::{reflect, ResamplePlan};

const TILE: usize = 2048;

struct ConvGeom {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    /// reflected source row / column for each padded offset
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl ConvGeom {
    fn new(x: Shape, weight: Shape, bias_len: usize) -> Result<Self> {
        let [n, cin, h, w] = x;
        let [cout, wcin, kh, kw] = weight;
        if kh != kw || !(kh == 1 || kh == 3) {
            return Err(Error::ShapeMismatch(format!(
                "conv kernel must be 1x1 or 3x3, got {kh}x{kw}"
            )));
        }
        if wcin != cin {
            return Err(Error::ShapeMismatch(format!(
                "conv weight expects {wcin} input channels, input has {cin}"
            )));
        }
        if bias_len != cout {
            return Err(Error::ShapeMismatch(format!(
                "conv bias has {bias_len} entries for {cout} output channels"
            )));
        }
        let pad = (kh / 2) as isize;
        let rows = (-pad..h as isize + pad).map(|i| reflect(i, h)).collect();
        let cols = (-pad..w as isize + pad).map(|i| reflect(i, w)).collect();
        Ok(Self {
            n,
            cin,
            cout,
            h,
            w,
            k: kh,
            rows,
            cols,
        })
    }

    fn kdim(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    fn tiles(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let hw = self.plane();
        (0..hw).step_by(TILE).map(move |p0| (p0, (p0 + TILE).min(hw)))
    }

    /// Column matrix `(cin*k*k) x (p1-p0)` for pixels `p0..p1` of one image.
    fn im2col<T: Real>(&self, img: &[T], p0: usize, p1: usize, col: &mut Vec<T>) {
        let np = p1 - p0;
        col.clear();
        col.resize(self.kdim() * np, T::zero());
        let hw = self.plane();
        for ci in 0..self.cin {
            let src = &img[ci * hw..(ci + 1) * hw];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ((ci * self.k + ky) * self.k + kx) * np;
                    let dst = &mut col[row..row + np];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let p = p0 + j;
                        let (y, x) = (p / self.w, p % self.w);
                        *d = src[self.rows[y + ky] * self.w + self.cols[x + kx]];
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`]: accumulates a column matrix into the image grad.
    fn col2im<T: Real>(&self, col: &[T], p0: usize, p1: usize, img: &mut [T]) {
        let np = p1 - p0;
        let hw = self.plane();
        for ci in 0..self.cin {
            let dst = &mut img[ci * hw..(ci + 1) * hw];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ((ci * self.k + ky) * self.k + kx) * np;
                    for (j, &v) in col[row..row + np].iter().enumerate() {
                        let p = p0 + j;
                        let (y, x) = (p / self.w, p % self.w);
                        dst[self.rows[y + ky] * self.w + self.cols[x + kx]] += v;
                    }
                }
            }
        }
    }
}

/// Cross-correlation with reflect padding; spatial size is preserved.
/// `weight` is `(out, in, k, k)` with `k` 1 or 3; `bias` has `out` entries.
pub fn conv2d<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x.shape(), weight.shape(), bias.numel())?;
    let (hw, kdim) = (g.plane(), g.kdim());
    let jobs: Vec<(usize, usize, usize)> = (0..g.n)
        .flat_map(|n| g.tiles().map(move |(p0, p1)| (n, p0, p1)).collect::<Vec<_>>())
        .collect();
    let xs = x.data();
    let tiles: Vec<Vec<T>> = jobs
        .par_iter()
        .map_init(Vec::new, |col, &(n, p0, p1)| {
            let np = p1 - p0;
            g.im2col(&xs[n * g.cin * hw..(n + 1) * g.cin * hw], p0, p1, col);
            let mut out = vec![T::zero(); g.cout * np];
            for (co, row) in out.chunks_exact_mut(np).enumerate() {
                row.iter_mut().for_each(|v| *v = bias.data()[co]);
            }
            T::gemm(g.cout, kdim, np, T::one(), weight.data(), false, col, false, T::one(), &mut out);
            out
        })
        .collect();

    let mut y = Tensor::zeros([g.n, g.cout, g.h, g.w]);
    let yd = y.data_mut();
    for (&(n, p0, p1), tile) in jobs.iter().zip(&tiles) {
        let np = p1 - p0;
        for co in 0..g.cout {
            let dst = (n * g.cout + co) * hw + p0;
            yd[dst..dst + np].copy_from_slice(&tile[co * np..(co + 1) * np]);
        }
    }
    Ok(y)
}

pub struct ConvGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias_len: usize,
    grad_out: &[T],
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::new(x.shape(), weight.shape(), bias_len)?;
    let (hw, kdim) = (g.plane(), g.kdim());
    if grad_out.len() != g.n * g.cout * hw {
        return Err(Error::ShapeMismatch("conv output gradient size".into()));
    }
    let xs = x.data();
    let per_image: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..g.n)
        .into_par_iter()
        .map(|n| {
            let img = &xs[n * g.cin * hw..(n + 1) * g.cin * hw];
            let gout = &grad_out[n * g.cout * hw..(n + 1) * g.cout * hw];
            let mut dx = vec![T::zero(); g.cin * hw];
            let mut dw = vec![T::zero(); g.cout * kdim];
            let mut db = vec![T::zero(); g.cout];
            let mut col = Vec::new();
            let mut gy = Vec::new();
            let mut dcol = Vec::new();
            for (p0, p1) in g.tiles() {
                let np = p1 - p0;
                g.im2col(img, p0, p1, &mut col);
                gy.clear();
                for co in 0..g.cout {
                    let row = &gout[co * hw + p0..co * hw + p1];
                    db[co] += row.iter().copied().sum::<T>();
                    gy.extend_from_slice(row);
                }
                // dW += dY col^T
                T::gemm(g.cout, np, kdim, T::one(), &gy, false, &col, true, T::one(), &mut dw);
                // dcol = W^T dY
                dcol.clear();
                dcol.resize(kdim * np, T::zero());
                T::gemm(kdim, g.cout, np, T::one(), weight.data(), true, &gy, false, T::zero(), &mut dcol);
                g.col2im(&dcol, p0, p1, &mut dx);
            }
            (dx, dw, db)
        })
        .collect();

    let mut input = Vec::with_capacity(g.n * g.cin * hw);
    let mut dw = vec![T::zero(); g.cout * kdim];
    let mut db = vec![T::zero(); g.cout];
    for (dx, w_n, b_n) in per_image {
        input.extend(dx);
        dw.iter_mut().zip(&w_n).for_each(|(a, &b)| *a += b);
        db.iter_mut().zip(&b_n).for_each(|(a, &b)| *a += b);
    }
    Ok(ConvGrads {
        input,
        weight: dw,
        bias: db,
    })
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &[T]) -> Vec<T> {
    x.data()
        .iter()
        .zip(grad_out)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect()
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("add {:?} + {:?}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

fn shuffle_index(shape: Shape, r: usize) -> impl Fn(usize, usize, usize, usize) -> (usize, usize) {
    // (n, c_out, oy, ox) -> (input flat index, output flat index)
    let [_, cin, h, w] = shape;
    let cout = cin / (r * r);
    move |n, c, oy, ox| {
        let (y, i) = (oy / r, oy % r);
        let (x, j) = (ox / r, ox % r);
        let ic = c * r * r + i * r + j;
        let src = ((n * cin + ic) * h + y) * w + x;
        let dst = ((n * cout + c) * h * r + oy) * w * r + ox;
        (src, dst)
    }
}

/// `(N, C r^2, H, W) -> (N, C, rH, rW)` with
/// `out[n, c, r h + i, r w + j] = in[n, c r^2 + i r + j, h, w]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::ShapeMismatch(format!(
            "pixel shuffle by {r} needs channels divisible by {}, got {c}",
            r * r
        )));
    }
    let cout = c / (r * r);
    let mut out = Tensor::zeros([n, cout, h * r, w * r]);
    let idx = shuffle_index(x.shape(), r);
    let (src, dst) = (x.data(), out.data_mut());
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..h * r {
                for ox in 0..w * r {
                    let (s, d) = idx(b, co, oy, ox);
                    dst[d] = src[s];
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`pixel_shuffle`] (also its gradient).
pub fn pixel_unshuffle<T: Real>(y: &[T], input_shape: Shape, r: usize) -> Vec<T> {
    let [n, c, h, w] = input_shape;
    let cout = c / (r * r);
    let idx = shuffle_index(input_shape, r);
    let mut out = vec![T::zero(); y.len()];
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..h * r {
                for ox in 0..w * r {
                    let (s, d) = idx(b, co, oy, ox);
                    out[s] = y[d];
                }
            }
        }
    }
    out
}

/// Applies a 2-D resampling plan to every plane of a batch.
pub fn resample<T: Real>(x: &Tensor<T>, plan: &ResamplePlan) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if plan.in_dims() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "resample plan for {:?}, tensor is {h}x{w}",
            plan.in_dims()
        )));
    }
    let (oh, ow) = plan.out_dims();
    let mut out = Tensor::zeros([n, c, oh, ow]);
    out.data_mut()
        .par_chunks_exact_mut(oh * ow)
        .zip(x.data().par_chunks_exact(h * w))
        .for_each(|(dst, src)| plan.apply_plane(src, dst));
    Ok(out)
}

pub fn resample_backward<T: Real>(grad_out: &[T], input_shape: Shape, plan: &ResamplePlan) -> Vec<T> {
    let [_, _, h, w] = input_shape;
    let (oh, ow) = plan.out_dims();
    let mut g = vec![T::zero(); input_shape.iter().product()];
    g.par_chunks_exact_mut(h * w)
        .zip(grad_out.par_chunks_exact(oh * ow))
        .for_each(|(dst, src)| plan.adjoint_plane(src, dst));
    g
}

/// Mean absolute error.
pub fn l1_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "l1 loss {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let sum: T = pred.data().iter().zip(target.data()).map(|(&p, &t)| (p - t).abs()).sum();
    Ok(sum / T::from_f64(pred.numel() as f64))
}

/// `d loss / d pred = sign(pred - target) / count`, scaled by `upstream`.
pub fn l1_loss_backward<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, upstream: T) -> Vec<T> {
    let scale = upstream / T::from_f64(pred.numel() as f64);
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            if p > t {
                scale
            } else if p < t {
                -scale
            } else {
                T::zero()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, f: impl Fn(usize) -> f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn identity_1x1_conv() {
        let x = t([2, 3, 4, 5], |i| (i as f64 * 0.13).sin());
        let mut w = Tensor::zeros([3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let y = conv2d(&x, &w, &Tensor::zeros([1, 3, 1, 1])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn box_conv_keeps_constants() {
        let x = t([1, 2, 6, 5], |_| 0.37);
        let w = t([1, 2, 3, 3], |_| 1.0 / 18.0);
        let y = conv2d(&x, &w, &Tensor::zeros([1, 1, 1, 1])).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn conv_matches_direct_loop() {
        let x = t([2, 2, 5, 7], |i| ((i * 37) % 23) as f64 / 23.0 - 0.5);
        let w = t([3, 2, 3, 3], |i| ((i * 11) % 7) as f64 / 7.0 - 0.4);
        let b = t([1, 3, 1, 1], |i| i as f64 * 0.1);
        let y = conv2d(&x, &w, &b).unwrap();
        let (h, wd) = (5isize, 7isize);
        for n in 0..2 {
            for co in 0..3 {
                for yy in 0..h {
                    for xx in 0..wd {
                        let mut acc = b.data()[co];
                        for ci in 0..2 {
                            for ky in 0..3isize {
                                for kx in 0..3isize {
                                    let sy = reflect(yy + ky - 1, 5);
                                    let sx = reflect(xx + kx - 1, 7);
                                    acc += w.data()[((co * 2 + ci) * 3 + ky as usize) * 3 + kx as usize]
                                        * x.data()[((n * 2 + ci) * 5 + sy) * 7 + sx];
                                }
                            }
                        }
                        let got = y.data()[((n * 3 + co) * 5 + yy as usize) * 7 + xx as usize];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::<f64>::zeros([1, 2, 4, 4]);
        assert!(conv2d(&x, &Tensor::zeros([1, 3, 3, 3]), &Tensor::zeros([1, 1, 1, 1])).is_err());
        assert!(conv2d(&x, &Tensor::zeros([1, 2, 5, 5]), &Tensor::zeros([1, 1, 1, 1])).is_err());
        assert!(conv2d(&x, &Tensor::zeros([1, 2, 3, 3]), &Tensor::zeros([1, 2, 1, 1])).is_err());
    }

    #[test]
    fn relu_cases() {
        let neg = t([1, 1, 2, 3], |i| -(i as f64) - 0.1);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = t([1, 1, 2, 3], |i| i as f64);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn pixel_shuffle_layout() {
        let x = t([1, 4, 1, 1], |i| [1.0, 2.0, 3.0, 4.0][i]);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);

        let x = t([2, 8, 3, 2], |i| i as f64);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), [2, 2, 6, 4]);
        assert_eq!(pixel_unshuffle(y.data(), x.shape(), 2), x.data());
        assert!(pixel_shuffle(&t([1, 6, 1, 1], |_| 0.0), 2).is_err());
    }

    #[test]
    fn l1_values() {
        let a = t([1, 1, 2, 2], |i| i as f64);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        let b = t([1, 1, 2, 2], |i| i as f64 + 0.5);
        assert_eq!(l1_loss(&a, &b).unwrap(), 0.5);
        assert_eq!(l1_loss_backward(&a, &b, 1.0), vec![-0.25; 4]);
        assert!(l1_loss(&a, &t([1, 1, 1, 4], |_| 0.0)).is_err());
    }
}
