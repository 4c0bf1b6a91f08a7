//! Bilinear resampling, align-corners-false.
//!
//! Source coordinate of output index o along an axis of input length `in`:
//! `s = (o + 0.5) * in/out - 0.5`, with the two taps clamped to the valid
//! range. Interpolation uses the lerp form `a + t*(b - a)`, which keeps
//! constant images exactly constant and makes a same-size resize the
//! identity bit for bit.

use crate::error::{Error, Result};
use crate::tensor::tape::{finish, OpKind};
use crate::tensor::{Scalar, Shape, Tensor};

struct AxisTap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(in_len: usize, out_len: usize) -> Vec<AxisTap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let s = (o as f64 + 0.5) * scale - 0.5;
            let floor = s.floor();
            let lo = (floor.max(0.0) as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            // frac measured from the unclamped floor keeps edge weights
            // consistent with the clamped taps.
            let frac = if floor < 0.0 { 0.0 } else { s - floor };
            AxisTap { lo, hi, frac }
        })
        .collect()
}

pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(
            "bilinear_resize",
            "output dimensions must be >= 1",
        ));
    }
    let out_shape = Shape::new(s.n, s.c, out_h, out_w);
    let ys = axis_taps(s.h, out_h);
    let xs = axis_taps(s.w, out_w);
    let data = x.data();
    let mut out = vec![T::ZERO; out_shape.numel()];
    for nc in 0..s.n * s.c {
        let plane = &data[nc * s.h * s.w..(nc + 1) * s.h * s.w];
        let out_plane = &mut out[nc * out_h * out_w..(nc + 1) * out_h * out_w];
        for (oi, ty) in ys.iter().enumerate() {
            let fy = T::from_f64(ty.frac);
            let row_lo = &plane[ty.lo * s.w..ty.lo * s.w + s.w];
            let row_hi = &plane[ty.hi * s.w..ty.hi * s.w + s.w];
            let out_row = &mut out_plane[oi * out_w..(oi + 1) * out_w];
            for (oj, tx) in xs.iter().enumerate() {
                let fx = T::from_f64(tx.frac);
                let top = row_lo[tx.lo] + fx * (row_lo[tx.hi] - row_lo[tx.lo]);
                let bot = row_hi[tx.lo] + fx * (row_hi[tx.hi] - row_hi[tx.lo]);
                out_row[oj] = top + fy * (bot - top);
            }
        }
    }
    finish("bilinear_resize", out_shape, out, &[x], || {
        OpKind::BilinearResize {
            in_shape: s,
            out_shape,
        }
    })
}

/// Adjoint: scatter each output gradient onto its four source taps with the
/// bilinear weights.
pub(crate) fn backward<T: Scalar>(gy: &[T], in_shape: Shape, out_shape: Shape) -> Vec<T> {
    let ys = axis_taps(in_shape.h, out_shape.h);
    let xs = axis_taps(in_shape.w, out_shape.w);
    let mut gx = vec![T::ZERO; in_shape.numel()];
    let (ih, iw) = (in_shape.h, in_shape.w);
    let (oh, ow) = (out_shape.h, out_shape.w);
    for nc in 0..in_shape.n * in_shape.c {
        let gplane = &gy[nc * oh * ow..(nc + 1) * oh * ow];
        let xplane = &mut gx[nc * ih * iw..(nc + 1) * ih * iw];
        for (oi, ty) in ys.iter().enumerate() {
            let fy = T::from_f64(ty.frac);
            let wy_lo = T::ONE - fy;
            for (oj, tx) in xs.iter().enumerate() {
                let g = gplane[oi * ow + oj];
                let fx = T::from_f64(tx.frac);
                let wx_lo = T::ONE - fx;
                xplane[ty.lo * iw + tx.lo] += g * wy_lo * wx_lo;
                xplane[ty.lo * iw + tx.hi] += g * wy_lo * fx;
                xplane[ty.hi * iw + tx.lo] += g * fy * wx_lo;
                xplane[ty.hi * iw + tx.hi] += g * fy * fx;
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn same_size_is_identity() {
        let mut rng = Rng::new(11);
        let shape = Shape::new(1, 3, 5, 7);
        let data: Vec<f32> = (0..shape.numel()).map(|_| rng.next_f64() as f32).collect();
        let x = Tensor::from_vec(shape, data.clone()).unwrap();
        let y = bilinear_resize(&x, 5, 7).unwrap();
        assert_eq!(y.data(), &data[..]);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 4, 4), 0.37).unwrap();
        for &(h, w) in &[(2usize, 2usize), (8, 8), (3, 5), (1, 1)] {
            let y = bilinear_resize(&x, h, w).unwrap();
            assert!(
                y.data().iter().all(|&v| (v - 0.37).abs() < 1e-6),
                "{h}x{w}"
            );
        }
    }

    // Independent per-output-pixel reference: evaluates the interpolation
    // definition directly from the corner convention.
    fn reference_resize(x: &Tensor<f64>, oh: usize, ow: usize) -> Vec<f64> {
        let s = x.shape();
        let mut out = Vec::new();
        for n in 0..s.n {
            for c in 0..s.c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let sy = (oi as f64 + 0.5) * s.h as f64 / oh as f64 - 0.5;
                        let sx = (oj as f64 + 0.5) * s.w as f64 / ow as f64 - 0.5;
                        let y0 = sy.floor();
                        let x0 = sx.floor();
                        let fy = if y0 < 0.0 { 0.0 } else { sy - y0 };
                        let fx = if x0 < 0.0 { 0.0 } else { sx - x0 };
                        let yl = (y0.max(0.0) as usize).min(s.h - 1);
                        let yh = (yl + 1).min(s.h - 1);
                        let xl = (x0.max(0.0) as usize).min(s.w - 1);
                        let xh = (xl + 1).min(s.w - 1);
                        let v = x.at(n, c, yl, xl) * (1.0 - fy) * (1.0 - fx)
                            + x.at(n, c, yl, xh) * (1.0 - fy) * fx
                            + x.at(n, c, yh, xl) * fy * (1.0 - fx)
                            + x.at(n, c, yh, xh) * fy * fx;
                        out.push(v);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ramp_downsample_matches_reference() {
        let mut data = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                data.push((i * 4 + j) as f64);
            }
        }
        let x = Tensor::from_vec(Shape::new(1, 1, 4, 4), data).unwrap();
        let y = bilinear_resize(&x, 2, 2).unwrap();
        let want = reference_resize(&x, 2, 2);
        for (got, want) in y.data().iter().zip(&want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn random_resizes_match_reference() {
        let mut rng = Rng::new(23);
        for &(h, w, oh, ow) in &[(8usize, 8usize, 4usize, 4usize), (4, 6, 9, 5), (5, 5, 10, 10), (7, 3, 2, 11)] {
            let shape = Shape::new(2, 2, h, w);
            let data: Vec<f64> = (0..shape.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let x = Tensor::from_vec(shape, data).unwrap();
            let y = bilinear_resize(&x, oh, ow).unwrap();
            let want = reference_resize(&x, oh, ow);
            for (got, want) in y.data().iter().zip(&want) {
                assert!((got - want).abs() < 1e-9);
            }
        }
    }
}
