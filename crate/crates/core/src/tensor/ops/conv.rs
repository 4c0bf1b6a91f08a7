//! 2-D cross-correlation (the usual "convolution") via im2col + GEMM.

use super::reflect;
use crate::error::{Error, Result};
use crate::tensor::tape::{finish, OpKind, Saved};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PadMode {
    Zero,
    Reflect,
}

/// Cross-correlates `x` (n, c_in, h, w) with `weight` (c_out, c_in, k, k)
/// and adds `bias` (1, c_out, 1, 1). `k` must be odd. Differentiable with
/// respect to all three tensor arguments.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
    pad_mode: PadMode,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    let k = ws.h;
    if ws.w != k || k % 2 == 0 {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be square with odd size, got {}x{}", ws.h, ws.w),
        ));
    }
    if ws.c != xs.c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels but weight expects {}", xs.c, ws.c),
        ));
    }
    if bias.shape() != Shape::new(1, ws.n, 1, 1) {
        return Err(Error::shape(
            "conv2d",
            format!("bias must be (1,{},1,1), got {}", ws.n, bias.shape()),
        ));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be >= 1"));
    }
    let (oh, ow) = out_dims(xs, k, stride, padding).ok_or_else(|| {
        Error::shape(
            "conv2d",
            format!(
                "empty output for input {}x{}, kernel {k}, stride {stride}, padding {padding}",
                xs.h, xs.w
            ),
        )
    })?;
    let out_shape = Shape::new(xs.n, ws.n, oh, ow);
    let out = forward(
        x.data(),
        xs,
        weight.data(),
        ws,
        bias.data(),
        stride,
        padding,
        pad_mode,
        oh,
        ow,
    );
    finish("conv2d", out_shape, out, &[x, weight, bias], || OpKind::Conv2d {
        x: Saved::of(x),
        w: Saved::of(weight),
        stride,
        padding,
        pad_mode,
    })
}

fn out_dims(xs: Shape, k: usize, stride: usize, padding: usize) -> Option<(usize, usize)> {
    let span_h = xs.h + 2 * padding;
    let span_w = xs.w + 2 * padding;
    if span_h < k || span_w < k {
        return None;
    }
    Some(((span_h - k) / stride + 1, (span_w - k) / stride + 1))
}

/// Materializes the padded plane stack for one batch item into `out`.
fn pad_item<T: Scalar>(
    x: &[T],
    xs: Shape,
    n: usize,
    padding: usize,
    mode: PadMode,
    out: &mut [T],
) {
    let (h, w) = (xs.h, xs.w);
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    if padding == 0 {
        out.copy_from_slice(&x[n * xs.c * h * w..(n + 1) * xs.c * h * w]);
        return;
    }
    for c in 0..xs.c {
        let src = &x[(n * xs.c + c) * h * w..(n * xs.c + c + 1) * h * w];
        let dst = &mut out[c * ph * pw..(c + 1) * ph * pw];
        for i in 0..ph {
            let si = i as isize - padding as isize;
            let drow = &mut dst[i * pw..(i + 1) * pw];
            match mode {
                PadMode::Zero => {
                    if si < 0 || si >= h as isize {
                        drow.fill(T::ZERO);
                        continue;
                    }
                    let srow = &src[si as usize * w..(si as usize + 1) * w];
                    drow[..padding].fill(T::ZERO);
                    drow[padding..padding + w].copy_from_slice(srow);
                    drow[padding + w..].fill(T::ZERO);
                }
                PadMode::Reflect => {
                    let srow = &src[reflect(si, h) * w..(reflect(si, h) + 1) * w];
                    for (j, dv) in drow[..padding].iter_mut().enumerate() {
                        *dv = srow[reflect(j as isize - padding as isize, w)];
                    }
                    drow[padding..padding + w].copy_from_slice(srow);
                    for (j, dv) in drow[padding + w..].iter_mut().enumerate() {
                        *dv = srow[reflect((j + w) as isize, w)];
                    }
                }
            }
        }
    }
}

/// Scatters a padded-plane gradient back onto the unpadded input: the exact
/// adjoint of [`pad_item`].
fn unpad_adjoint<T: Scalar>(
    gp: &[T],
    xs: Shape,
    padding: usize,
    mode: PadMode,
    gx_item: &mut [T],
) {
    let (h, w) = (xs.h, xs.w);
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    for c in 0..xs.c {
        let src = &gp[c * ph * pw..(c + 1) * ph * pw];
        let dst = &mut gx_item[c * h * w..(c + 1) * h * w];
        for i in 0..ph {
            let si = i as isize - padding as isize;
            match mode {
                PadMode::Zero => {
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for j in 0..w {
                        dst[si as usize * w + j] += src[i * pw + padding + j];
                    }
                }
                PadMode::Reflect => {
                    let ri = reflect(si, h);
                    for j in 0..pw {
                        let rj = reflect(j as isize - padding as isize, w);
                        dst[ri * w + rj] += src[i * pw + j];
                    }
                }
            }
        }
    }
}

/// One batch item's patch matrix, written into `col` with row stride
/// `col_stride` (the batched layout packs every item side by side, so the
/// full matrix is (c_in*k*k, n*oh*ow)).
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    xp: &[T],
    c_in: usize,
    ph: usize,
    pw: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    col: &mut [T],
    col_stride: usize,
    col_offset: usize,
) {
    let l = oh * ow;
    for c in 0..c_in {
        let plane = &xp[c * ph * pw..(c + 1) * ph * pw];
        for di in 0..k {
            for dj in 0..k {
                let r = (c * k + di) * k + dj;
                let row = &mut col[r * col_stride + col_offset..r * col_stride + col_offset + l];
                for oi in 0..oh {
                    let src = &plane[(oi * stride + di) * pw + dj..];
                    let dst = &mut row[oi * ow..(oi + 1) * ow];
                    if stride == 1 {
                        dst.copy_from_slice(&src[..ow]);
                    } else {
                        for (o, d) in dst.iter_mut().enumerate() {
                            *d = src[o * stride];
                        }
                    }
                }
            }
        }
    }
}

/// col2im scatter: adjoint of [`im2col`], accumulating into padded planes.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    col: &[T],
    c_in: usize,
    ph: usize,
    pw: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    xp: &mut [T],
    col_stride: usize,
    col_offset: usize,
) {
    for c in 0..c_in {
        let plane = &mut xp[c * ph * pw..(c + 1) * ph * pw];
        for di in 0..k {
            for dj in 0..k {
                let r = (c * k + di) * k + dj;
                let row = &col[r * col_stride + col_offset..r * col_stride + col_offset + oh * ow];
                for oi in 0..oh {
                    let base = (oi * stride + di) * pw + dj;
                    let src = &row[oi * ow..(oi + 1) * ow];
                    if stride == 1 {
                        let dst = &mut plane[base..base + ow];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (o, &v) in src.iter().enumerate() {
                            plane[base + o * stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Builds the batched patch matrix (ckk, n*l): all items side by side.
#[allow(clippy::too_many_arguments)]
fn batched_im2col<T: Scalar>(
    x: &[T],
    xs: Shape,
    k: usize,
    stride: usize,
    padding: usize,
    pad_mode: PadMode,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let (ph, pw) = (xs.h + 2 * padding, xs.w + 2 * padding);
    let l = oh * ow;
    let ckk = xs.c * k * k;
    let mut col = vec![T::ZERO; ckk * xs.n * l];
    let mut xp = vec![T::ZERO; xs.c * ph * pw];
    for n in 0..xs.n {
        pad_item(x, xs, n, padding, pad_mode, &mut xp);
        im2col(
            &xp,
            xs.c,
            ph,
            pw,
            k,
            stride,
            oh,
            ow,
            &mut col,
            xs.n * l,
            n * l,
        );
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn forward<T: Scalar>(
    x: &[T],
    xs: Shape,
    w: &[T],
    ws: Shape,
    b: &[T],
    stride: usize,
    padding: usize,
    pad_mode: PadMode,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let k = ws.h;
    let l = oh * ow;
    let ckk = xs.c * k * k;
    let nl = xs.n * l;
    let col = batched_im2col(x, xs, k, stride, padding, pad_mode, oh, ow);

    // One GEMM across the whole batch: scratch(c_out, n*l) = W x col.
    let mut scratch = vec![T::ZERO; ws.n * nl];
    T::gemm(
        ws.n,
        ckk,
        nl,
        T::ONE,
        w,
        ckk as isize,
        1,
        &col,
        nl as isize,
        1,
        T::ZERO,
        &mut scratch,
        nl as isize,
        1,
    );

    // Permute (c_out, n, l) -> (n, c_out, l) and add the bias.
    let mut out = vec![T::ZERO; xs.n * ws.n * l];
    for o in 0..ws.n {
        let bv = b[o];
        for n in 0..xs.n {
            let src = &scratch[o * nl + n * l..o * nl + (n + 1) * l];
            let dst = &mut out[(n * ws.n + o) * l..(n * ws.n + o + 1) * l];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bv;
            }
        }
    }
    out
}

/// Gradients for (x, w, b) given the output gradient. The GEMMs run once
/// for the whole batch against a (c_out, n*l) permutation of gy.
pub(crate) fn backward<T: Scalar>(
    x: &Saved<T>,
    w: &Saved<T>,
    stride: usize,
    padding: usize,
    pad_mode: PadMode,
    gy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let xs = x.shape;
    let ws = w.shape;
    let k = ws.h;
    let (oh, ow) = out_dims(xs, k, stride, padding).expect("shapes validated at forward time");
    let l = oh * ow;
    let ckk = xs.c * k * k;
    let nl = xs.n * l;
    let (ph, pw) = (xs.h + 2 * padding, xs.w + 2 * padding);

    // gy (n, c_out, l) -> (c_out, n*l), accumulating the bias gradient on
    // the way through.
    let mut gb = vec![T::ZERO; ws.n];
    let mut gy_perm = vec![T::ZERO; ws.n * nl];
    for n in 0..xs.n {
        for o in 0..ws.n {
            let src = &gy[(n * ws.n + o) * l..(n * ws.n + o + 1) * l];
            let dst = &mut gy_perm[o * nl + n * l..o * nl + (n + 1) * l];
            dst.copy_from_slice(src);
            let mut acc = T::ZERO;
            for &g in src {
                acc += g;
            }
            gb[o] += acc;
        }
    }

    // gw(c_out, ckk) = gy_perm(c_out, nl) x col(ckk, nl)^T
    let col = batched_im2col(&x.data, xs, k, stride, padding, pad_mode, oh, ow);
    let mut gw = vec![T::ZERO; ws.numel()];
    T::gemm(
        ws.n,
        nl,
        ckk,
        T::ONE,
        &gy_perm,
        nl as isize,
        1,
        &col,
        1,
        nl as isize,
        T::ZERO,
        &mut gw,
        ckk as isize,
        1,
    );

    // gcol(ckk, nl) = W(c_out, ckk)^T x gy_perm(c_out, nl)
    let mut gcol = vec![T::ZERO; ckk * nl];
    T::gemm(
        ckk,
        ws.n,
        nl,
        T::ONE,
        &w.data,
        1,
        ckk as isize,
        &gy_perm,
        nl as isize,
        1,
        T::ZERO,
        &mut gcol,
        nl as isize,
        1,
    );

    let mut gx = vec![T::ZERO; xs.numel()];
    let mut gp = vec![T::ZERO; xs.c * ph * pw];
    for n in 0..xs.n {
        gp.fill(T::ZERO);
        col2im(&gcol, xs.c, ph, pw, k, stride, oh, ow, &mut gp, nl, n * l);
        unpad_adjoint(
            &gp,
            xs,
            padding,
            pad_mode,
            &mut gx[n * xs.c * xs.h * xs.w..(n + 1) * xs.c * xs.h * xs.w],
        );
    }
    (gx, gw, gb)
}
