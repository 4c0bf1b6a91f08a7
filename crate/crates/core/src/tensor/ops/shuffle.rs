//! Sub-pixel rearrangement: channel depth <-> spatial resolution.

use crate::error::{Error, Result};
use crate::tensor::tape::{finish, OpKind};
use crate::tensor::{Scalar, Shape, Tensor};

/// (n, c, h, w) -> (n, c/r^2, h*r, w*r). Input channel c_o*r^2 + s*r + t
/// lands at output (c_o, i*r + s, j*r + t): the standard sub-pixel layout.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || s.c % (r * r) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("channels {} not divisible by r^2 = {}", s.c, r * r),
        ));
    }
    let out_shape = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r);
    let out = shuffle_data(x.data(), s, r);
    finish("pixel_shuffle", out_shape, out, &[x], || OpKind::PixelShuffle {
        r,
        out_shape,
    })
}

/// Exact inverse of [`pixel_shuffle`]: (n, c, h, w) -> (n, c*r^2, h/r, w/r).
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || s.h % r != 0 || s.w % r != 0 {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("spatial dims {}x{} not divisible by r = {}", s.h, s.w, r),
        ));
    }
    let out_shape = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    let out = unshuffle_data(x.data(), s, r);
    finish("pixel_unshuffle", out_shape, out, &[x], || {
        OpKind::PixelUnshuffle { r, out_shape }
    })
}

/// Raw forward permutation for shuffle; `in_shape` describes `x`.
pub(crate) fn shuffle_data<T: Scalar>(x: &[T], in_shape: Shape, r: usize) -> Vec<T> {
    let s = in_shape;
    let oc = s.c / (r * r);
    let (oh, ow) = (s.h * r, s.w * r);
    let mut out = vec![T::ZERO; x.len()];
    for n in 0..s.n {
        for co in 0..oc {
            for si in 0..r {
                for ti in 0..r {
                    let ci = co * r * r + si * r + ti;
                    for i in 0..s.h {
                        let src_row = ((n * s.c + ci) * s.h + i) * s.w;
                        let dst_row = ((n * oc + co) * oh + (i * r + si)) * ow;
                        for j in 0..s.w {
                            out[dst_row + j * r + ti] = x[src_row + j];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Raw forward permutation for unshuffle; `in_shape` describes `x`.
pub(crate) fn unshuffle_data<T: Scalar>(x: &[T], in_shape: Shape, r: usize) -> Vec<T> {
    let s = in_shape;
    let oc = s.c * r * r;
    let (oh, ow) = (s.h / r, s.w / r);
    let mut out = vec![T::ZERO; x.len()];
    for n in 0..s.n {
        for ci in 0..s.c {
            for si in 0..r {
                for ti in 0..r {
                    let co = ci * r * r + si * r + ti;
                    for i in 0..oh {
                        let src_row = ((n * s.c + ci) * s.h + (i * r + si)) * s.w;
                        let dst_row = ((n * oc + co) * oh + i) * ow;
                        for j in 0..ow {
                            out[dst_row + j] = x[src_row + j * r + ti];
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn definitional_layout() {
        // (1,4,2,2), r=2 -> (1,1,4,4); channel s*2+t maps to (2i+s, 2j+t).
        let mut data = vec![0.0f32; 16];
        for c in 0..4 {
            for i in 0..2 {
                for j in 0..2 {
                    data[(c * 2 + i) * 2 + j] = (c * 100 + i * 10 + j) as f32;
                }
            }
        }
        let x = Tensor::from_vec(Shape::new(1, 4, 2, 2), data).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
        for s in 0..2 {
            for t in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let expect = ((s * 2 + t) * 100 + i * 10 + j) as f32;
                        assert_eq!(y.at(0, 0, 2 * i + s, 2 * j + t), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn shape_arithmetic() {
        let x = Tensor::<f32>::zeros(Shape::new(2, 16, 8, 8));
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 4, 16, 16));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = Rng::new(5);
        for &(n, c, h, w, r) in &[(1usize, 4usize, 2usize, 2usize, 2usize), (2, 16, 8, 8, 2), (1, 9, 3, 5, 3)] {
            let shape = Shape::new(n, c, h, w);
            let data: Vec<f32> = (0..shape.numel()).map(|_| rng.next_f64() as f32).collect();
            let x = Tensor::from_vec(shape, data.clone()).unwrap();
            let y = pixel_unshuffle(&pixel_shuffle(&x, r).unwrap(), r).unwrap();
            assert_eq!(y.data(), &data[..]);
            // and in the other direction, where divisibility allows
            let z = pixel_shuffle(&pixel_unshuffle(&x, 1).unwrap(), 1).unwrap();
            assert_eq!(z.data(), &data[..]);
        }
    }

    #[test]
    fn divisibility_violations_error() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4));
        assert!(pixel_shuffle(&x, 2).is_err());
        let y = Tensor::<f32>::zeros(Shape::new(1, 3, 5, 4));
        assert!(pixel_unshuffle(&y, 2).is_err());
    }
}
