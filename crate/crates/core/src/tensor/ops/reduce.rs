//! Reductions and the channel-broadcast product.

use crate::error::{Error, Result};
use crate::tensor::tape::{finish, OpKind, Saved};
use crate::tensor::{Scalar, Shape, Tensor};

/// Per-channel spatial mean: (n,c,h,w) -> (n,c,1,1).
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let hw = s.h * s.w;
    if hw == 0 {
        return Err(Error::shape("global_avg_pool", "empty spatial extent"));
    }
    let inv = T::ONE / T::from_f64(hw as f64);
    let data = x.data();
    let out = (0..s.n * s.c)
        .map(|nc| {
            let mut acc = T::ZERO;
            for &v in &data[nc * hw..(nc + 1) * hw] {
                acc += v;
            }
            acc * inv
        })
        .collect();
    finish(
        "global_avg_pool",
        Shape::new(s.n, s.c, 1, 1),
        out,
        &[x],
        || OpKind::GlobalAvgPool { in_shape: s },
    )
}

/// Mean across channels: (n,c,h,w) -> (n,1,h,w).
pub fn mean_channels<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let hw = s.h * s.w;
    let inv = T::ONE / T::from_f64(s.c as f64);
    let data = x.data();
    let mut out = vec![T::ZERO; s.n * hw];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = (n * s.c + c) * hw;
            let dst = n * hw;
            for i in 0..hw {
                out[dst + i] += data[src + i];
            }
        }
    }
    for v in &mut out {
        *v *= inv;
    }
    finish(
        "mean_channels",
        Shape::new(s.n, 1, s.h, s.w),
        out,
        &[x],
        || OpKind::MeanChannels { in_shape: s },
    )
}

/// Mean over every element -> (1,1,1,1).
pub fn mean_all<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let inv = T::ONE / T::from_f64(s.numel() as f64);
    let mut acc = T::ZERO;
    for &v in x.data() {
        acc += v;
    }
    finish(
        "mean_all",
        Shape::new(1, 1, 1, 1),
        vec![acc * inv],
        &[x],
        || OpKind::MeanAll { in_shape: s },
    )
}

/// Sum over every element -> (1,1,1,1).
pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let mut acc = T::ZERO;
    for &v in x.data() {
        acc += v;
    }
    finish("sum_all", Shape::new(1, 1, 1, 1), vec![acc], &[x], || {
        OpKind::SumAll { in_shape: s }
    })
}

/// x (n,c,h,w) scaled per channel by g (n,c,1,1).
pub fn mul_broadcast<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let gs = g.shape();
    if gs.n != s.n || gs.c != s.c || gs.h != 1 || gs.w != 1 {
        return Err(Error::shape(
            "mul_broadcast",
            format!("gate must be ({},{},1,1), got {}", s.n, s.c, gs),
        ));
    }
    let hw = s.h * s.w;
    let xd = x.data();
    let gd = g.data();
    let mut out = vec![T::ZERO; s.numel()];
    for nc in 0..s.n * s.c {
        let gv = gd[nc];
        let base = nc * hw;
        for i in 0..hw {
            out[base + i] = xd[base + i] * gv;
        }
    }
    finish("mul_broadcast", s, out, &[x, g], || OpKind::MulBroadcast {
        x: Saved::of(x),
        g: Saved::of(g),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::autograd;

    #[test]
    fn pool_of_constant_is_constant() {
        let x = Tensor::<f64>::full(Shape::new(2, 3, 4, 4), 1.25).unwrap();
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 3, 1, 1));
        assert!(y.data().iter().all(|&v| (v - 1.25).abs() < 1e-12));
    }

    #[test]
    fn pool_is_arithmetic_mean() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = global_avg_pool(&x).unwrap();
        assert!((y.data()[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn pool_gradient_is_inverse_area() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .requires_grad();
        autograd::start_graph::<f64>().unwrap();
        let y = global_avg_pool(&x).unwrap();
        let s = sum_all(&y).unwrap();
        autograd::backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn mean_channels_averages() {
        let x = Tensor::<f64>::from_vec(
            Shape::new(1, 2, 1, 2),
            vec![1.0, 2.0, 3.0, 4.0], // c0: [1,2], c1: [3,4]
        )
        .unwrap();
        let y = mean_channels(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 2));
        assert_eq!(y.data(), &[2.0, 3.0]);
    }

    #[test]
    fn broadcast_product_scales_channels() {
        let x = Tensor::<f64>::full(Shape::new(1, 2, 2, 2), 1.0).unwrap();
        let g = Tensor::<f64>::from_vec(Shape::new(1, 2, 1, 1), vec![2.0, 3.0]).unwrap();
        let y = mul_broadcast(&x, &g).unwrap();
        assert_eq!(&y.data()[..4], &[2.0; 4]);
        assert_eq!(&y.data()[4..], &[3.0; 4]);
    }
}
