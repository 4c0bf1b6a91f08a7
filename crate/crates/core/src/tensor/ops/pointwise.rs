//! Elementwise operations.

use super::check_same_shape;
use crate::error::{Error, Result};
use crate::tensor::tape::{finish, OpKind, Saved};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let out = x
        .data()
        .iter()
        .map(|&v| if v > T::ZERO { v } else { T::ZERO })
        .collect();
    finish("relu", x.shape(), out, &[x], || OpKind::Relu { x: Saved::of(x) })
}

/// Parametric rectified linear unit. The negative slope is itself a
/// trainable (1,1,1,1) tensor.
pub fn prelu<T: Scalar>(x: &Tensor<T>, slope: &Tensor<T>) -> Result<Tensor<T>> {
    if !slope.shape().is_scalar() {
        return Err(Error::shape(
            "prelu",
            format!("slope must be (1,1,1,1), got {}", slope.shape()),
        ));
    }
    let a = slope.data()[0];
    let out = x
        .data()
        .iter()
        .map(|&v| if v > T::ZERO { v } else { a * v })
        .collect();
    finish("prelu", x.shape(), out, &[x, slope], || OpKind::Prelu {
        x: Saved::of(x),
        slope: a,
    })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let out: Vec<T> = x
        .data()
        .iter()
        .map(|&v| T::ONE / (T::ONE + (-v).exp()))
        .collect();
    let saved = out.clone();
    finish("sigmoid", x.shape(), out, &[x], move || OpKind::Sigmoid {
        y: Saved {
            data: std::sync::Arc::new(saved),
            shape: x.shape(),
        },
    })
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("add", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    finish("add", a.shape(), out, &[a, b], || OpKind::Add)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("sub", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
    finish("sub", a.shape(), out, &[a, b], || OpKind::Sub)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("mul", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    finish("mul", a.shape(), out, &[a, b], || OpKind::Mul {
        a: Saved::of(a),
        b: Saved::of(b),
    })
}

pub fn div<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("div", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x / y).collect();
    finish("div", a.shape(), out, &[a, b], || OpKind::Div {
        a: Saved::of(a),
        b: Saved::of(b),
    })
}

pub fn scale<T: Scalar>(x: &Tensor<T>, s: f64) -> Result<Tensor<T>> {
    let sv = T::from_f64(s);
    let out = x.data().iter().map(|&v| sv * v).collect();
    finish("scale", x.shape(), out, &[x], || OpKind::Scale { s: sv })
}

pub fn add_scalar<T: Scalar>(x: &Tensor<T>, c: f64) -> Result<Tensor<T>> {
    let cv = T::from_f64(c);
    let out = x.data().iter().map(|&v| v + cv).collect();
    finish("add_scalar", x.shape(), out, &[x], || OpKind::AddScalar)
}

/// blend(lambda)(a, b) = (1 - lambda) * a + lambda * b, elementwise.
pub fn blend<T: Scalar>(lambda: f64, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("blend", a, b)?;
    let l = T::from_f64(lambda);
    let la = T::ONE - l;
    let out = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| la * x + l * y)
        .collect();
    finish("blend", a.shape(), out, &[a, b], || OpKind::Blend { lambda: l })
}

pub fn exp<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let out: Vec<T> = x.data().iter().map(|&v| v.exp()).collect();
    let saved = out.clone();
    finish("exp", x.shape(), out, &[x], move || OpKind::Exp {
        y: Saved {
            data: std::sync::Arc::new(saved),
            shape: x.shape(),
        },
    })
}

pub fn abs<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let out = x.data().iter().map(|&v| v.abs()).collect();
    finish("abs", x.shape(), out, &[x], || OpKind::Abs { x: Saved::of(x) })
}
