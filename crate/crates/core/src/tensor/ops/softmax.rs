//! Channel concatenation and the across-branch softmax.

use super::{check_same_shape, elementwise_max_detached, pointwise};
use crate::error::{Error, Result};
use crate::tensor::tape::{finish, OpKind};
use crate::tensor::{Scalar, Shape, Tensor};

/// Concatenates along the channel axis in argument order.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "empty input list"))?;
    let s0 = first.shape();
    let mut widths = Vec::with_capacity(xs.len());
    let mut total_c = 0;
    for x in xs {
        let s = x.shape();
        if s.n != s0.n || s.h != s0.h || s.w != s0.w {
            return Err(Error::shape(
                "concat_channels",
                format!("incompatible shapes {} vs {}", s, s0),
            ));
        }
        widths.push(s.c);
        total_c += s.c;
    }
    let out_shape = Shape::new(s0.n, total_c, s0.h, s0.w);
    let hw = s0.h * s0.w;
    let mut out = vec![T::ZERO; out_shape.numel()];
    for n in 0..s0.n {
        let mut offset = 0;
        for x in xs {
            let c = x.shape().c;
            let src = n * c * hw;
            let dst = (n * total_c + offset) * hw;
            out[dst..dst + c * hw].copy_from_slice(&x.data()[src..src + c * hw]);
            offset += c;
        }
    }
    finish("concat_channels", out_shape, out, xs, || {
        OpKind::ConcatChannels { widths, out_shape }
    })
}

/// Softmax across a list of same-shaped branches, per element position.
/// Outputs are strictly positive and sum to one over the branch axis.
///
/// Built from exp/add/div primitives after subtracting the detached
/// elementwise maximum; softmax is shift-invariant, so detaching the shift
/// leaves both the value and the gradient exact.
pub fn branch_softmax<T: Scalar>(branches: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    if branches.len() < 2 {
        return Err(Error::invalid(
            "branch_softmax",
            format!("need at least 2 branches, got {}", branches.len()),
        ));
    }
    for b in &branches[1..] {
        check_same_shape("branch_softmax", &branches[0], b)?;
    }
    let peak = elementwise_max_detached(branches)?;
    let exps: Vec<Tensor<T>> = branches
        .iter()
        .map(|b| pointwise::exp(&pointwise::sub(b, &peak)?))
        .collect::<Result<_>>()?;
    let mut denom = exps[0].clone();
    for e in &exps[1..] {
        denom = pointwise::add(&denom, e)?;
    }
    exps.iter().map(|e| pointwise::div(e, &denom)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_shape_arithmetic() {
        let a = Tensor::<f32>::full(Shape::new(1, 2, 4, 4), 1.0).unwrap();
        let b = Tensor::<f32>::full(Shape::new(1, 3, 4, 4), 2.0).unwrap();
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), Shape::new(1, 5, 4, 4));
        assert_eq!(c.at(0, 0, 0, 0), 1.0);
        assert_eq!(c.at(0, 2, 0, 0), 2.0);
    }

    #[test]
    fn concat_rejects_mismatch() {
        let a = Tensor::<f32>::full(Shape::new(1, 2, 4, 4), 1.0).unwrap();
        let b = Tensor::<f32>::full(Shape::new(1, 2, 8, 8), 2.0).unwrap();
        assert!(concat_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn equal_branches_get_half_each() {
        let a = Tensor::<f64>::full(Shape::new(1, 2, 2, 2), 0.7).unwrap();
        let b = Tensor::<f64>::full(Shape::new(1, 2, 2, 2), 0.7).unwrap();
        let w = branch_softmax(&[a, b]).unwrap();
        for t in &w {
            assert!(t.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        }
    }

    #[test]
    fn softmax_sums_to_one_and_is_positive() {
        let mut branches = Vec::new();
        for seed in 0..3u64 {
            branches.push(
                Tensor::<f64>::randn(Shape::new(2, 3, 4, 4), 0.0, 2.0, 100 + seed).unwrap(),
            );
        }
        let w = branch_softmax(&branches).unwrap();
        let numel = branches[0].numel();
        for i in 0..numel {
            let total: f64 = w.iter().map(|t| t.data()[i]).sum();
            assert!((total - 1.0).abs() < 1e-6, "sum {total}");
            assert!(w.iter().all(|t| t.data()[i] > 0.0));
        }
    }

    #[test]
    fn softmax_needs_two_branches() {
        let a = Tensor::<f64>::full(Shape::new(1, 1, 2, 2), 0.0).unwrap();
        assert!(branch_softmax(&[a]).is_err());
    }
}
