//! Separable Gaussian filtering with reflect boundaries.
//!
//! Kernels have radius ceil(3*sigma) and are normalized to sum to one, so
//! the separable pass pair is exactly the normalized 2-D Gaussian window.

use std::sync::Arc;

use super::reflect;
use crate::error::{Error, Result};
use crate::tensor::tape::{finish, OpKind};
use crate::tensor::{Scalar, Shape, Tensor};

/// Normalized 1-D Gaussian taps for the given sigma, radius ceil(3*sigma).
pub fn gaussian_kernel_1d(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(
            "gaussian_kernel",
            format!("sigma must be > 0, got {sigma}"),
        ));
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let mut taps: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= total;
    }
    Ok(taps)
}

/// Per-channel Gaussian smoothing; differentiable with respect to `x`.
pub fn gaussian_blur<T: Scalar>(x: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    let kernel: Arc<Vec<T>> = Arc::new(
        gaussian_kernel_1d(sigma)?
            .into_iter()
            .map(T::from_f64)
            .collect(),
    );
    let s = x.shape();
    let out = apply(x.data(), s, &kernel);
    finish("gaussian_blur", s, out, &[x], || OpKind::GaussianBlur {
        kernel,
        shape: s,
    })
}

/// Vertical then horizontal pass over every (n, c) plane.
pub(crate) fn apply<T: Scalar>(x: &[T], shape: Shape, kernel: &[T]) -> Vec<T> {
    let mut tmp = vec![T::ZERO; x.len()];
    let mut out = vec![T::ZERO; x.len()];
    let (h, w) = (shape.h, shape.w);
    for nc in 0..shape.n * shape.c {
        let src = &x[nc * h * w..(nc + 1) * h * w];
        let mid = &mut tmp[nc * h * w..(nc + 1) * h * w];
        pass_cols(src, mid, h, w, kernel);
        let dst = &mut out[nc * h * w..(nc + 1) * h * w];
        pass_rows(mid, dst, h, w, kernel);
    }
    out
}

/// Exact adjoint of [`apply`]: transposed horizontal pass, then transposed
/// vertical pass, with the same reflected index map run as a scatter.
pub(crate) fn adjoint<T: Scalar>(gy: &[T], shape: Shape, kernel: &[T]) -> Vec<T> {
    let mut tmp = vec![T::ZERO; gy.len()];
    let mut out = vec![T::ZERO; gy.len()];
    let (h, w) = (shape.h, shape.w);
    for nc in 0..shape.n * shape.c {
        let src = &gy[nc * h * w..(nc + 1) * h * w];
        let mid = &mut tmp[nc * h * w..(nc + 1) * h * w];
        scatter_rows(src, mid, h, w, kernel);
        let dst = &mut out[nc * h * w..(nc + 1) * h * w];
        scatter_cols(mid, dst, h, w, kernel);
    }
    out
}

/// dst[i][j] += sum_t k[t] * src[i][reflect(j + t - r)]
fn pass_rows<T: Scalar>(src: &[T], dst: &mut [T], h: usize, w: usize, kernel: &[T]) {
    let r = kernel.len() / 2;
    for i in 0..h {
        let s = &src[i * w..(i + 1) * w];
        let d = &mut dst[i * w..(i + 1) * w];
        for (t, &k) in kernel.iter().enumerate() {
            let off = t as isize - r as isize;
            let (j0, j1) = interior(w, off);
            for j in 0..j0 {
                d[j] += k * s[reflect(j as isize + off, w)];
            }
            if j1 > j0 {
                let shifted = &s[(j0 as isize + off) as usize..(j1 as isize + off) as usize];
                let seg = &mut d[j0..j1];
                for (dv, &sv) in seg.iter_mut().zip(shifted) {
                    *dv += k * sv;
                }
            }
            for j in j1..w {
                d[j] += k * s[reflect(j as isize + off, w)];
            }
        }
    }
}

/// dst[i][reflect(j + t - r)] += k[t] * src[i][j] — the scatter transpose.
fn scatter_rows<T: Scalar>(src: &[T], dst: &mut [T], h: usize, w: usize, kernel: &[T]) {
    let r = kernel.len() / 2;
    for i in 0..h {
        let s = &src[i * w..(i + 1) * w];
        let d = &mut dst[i * w..(i + 1) * w];
        for (t, &k) in kernel.iter().enumerate() {
            let off = t as isize - r as isize;
            let (j0, j1) = interior(w, off);
            for j in 0..j0 {
                d[reflect(j as isize + off, w)] += k * s[j];
            }
            if j1 > j0 {
                let lo = (j0 as isize + off) as usize;
                for (idx, j) in (j0..j1).enumerate() {
                    d[lo + idx] += k * s[j];
                }
            }
            for j in j1..w {
                d[reflect(j as isize + off, w)] += k * s[j];
            }
        }
    }
}

/// dst row i += sum_t k[t] * src row reflect(i + t - r): whole-row axpy.
fn pass_cols<T: Scalar>(src: &[T], dst: &mut [T], h: usize, w: usize, kernel: &[T]) {
    let r = kernel.len() / 2;
    for (t, &k) in kernel.iter().enumerate() {
        let off = t as isize - r as isize;
        for i in 0..h {
            let si = reflect(i as isize + off, h);
            let srow = &src[si * w..(si + 1) * w];
            let drow = &mut dst[i * w..(i + 1) * w];
            for (dv, &sv) in drow.iter_mut().zip(srow) {
                *dv += k * sv;
            }
        }
    }
}

/// dst row reflect(i + t - r) += k[t] * src row i — the scatter transpose.
fn scatter_cols<T: Scalar>(src: &[T], dst: &mut [T], h: usize, w: usize, kernel: &[T]) {
    let r = kernel.len() / 2;
    for (t, &k) in kernel.iter().enumerate() {
        let off = t as isize - r as isize;
        for i in 0..h {
            let di = reflect(i as isize + off, h);
            let srow = &src[i * w..(i + 1) * w];
            // split_at_mut dance avoided: rows never alias themselves.
            let drow = &mut dst[di * w..(di + 1) * w];
            for (dv, &sv) in drow.iter_mut().zip(srow) {
                *dv += k * sv;
            }
        }
    }
}

/// Output index range [j0, j1) whose source j + off stays in [0, len).
fn interior(len: usize, off: isize) -> (usize, usize) {
    let j0 = (-off).max(0) as usize;
    let j1 = (len as isize - off.max(0)).max(0) as usize;
    (j0.min(len), j1.min(len))
}
