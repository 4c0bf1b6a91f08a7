//! Forward operations. Every function validates shapes, refuses non-finite
//! outputs and records itself on the active tape when an input is tracked.

pub(crate) mod blur;
pub(crate) mod conv;
mod pointwise;
mod reduce;
pub(crate) mod resize;
pub(crate) mod shuffle;
mod softmax;

pub use blur::{gaussian_blur, gaussian_kernel_1d};
pub use conv::{conv2d, PadMode};
pub use pointwise::{
    abs, add, add_scalar, blend, div, exp, mul, prelu, relu, scale, sigmoid, sub,
};
pub use reduce::{global_avg_pool, mean_all, mean_channels, mul_broadcast, sum_all};
pub use resize::bilinear_resize;
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
pub use softmax::{branch_softmax, concat_channels};

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

pub(crate) fn check_same_shape<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operands differ: {} vs {}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Elementwise maximum over a set of same-shaped tensors, detached from any
/// graph. Used where a constant reference point is wanted (e.g. softmax
/// stabilization), never as a differentiable op.
pub fn elementwise_max_detached<T: Scalar>(xs: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("elementwise_max", "empty input list"))?;
    let mut out = first.data().to_vec();
    for x in &xs[1..] {
        check_same_shape("elementwise_max", first, x)?;
        for (o, &v) in out.iter_mut().zip(x.data()) {
            *o = o.maximum(v);
        }
    }
    Tensor::from_vec(first.shape(), out)
}

/// Mirror-without-repeat index fold: valid for any offset, any length >= 1.
#[inline]
pub(crate) fn reflect(q: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let m = 2 * (len as isize - 1);
    let mut q = q.rem_euclid(m);
    if q >= len as isize {
        q = m - q;
    }
    q as usize
}

#[allow(unused)]
pub(crate) fn shape_of<T: Scalar>(t: &Tensor<T>) -> Shape {
    t.shape()
}
