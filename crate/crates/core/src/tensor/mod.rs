//! Dense 4-D tensors with reverse-mode automatic differentiation.
//!
//! Tensors are value types: the buffer is shared behind an `Arc` and cloned
//! lazily on mutation, so moving them between threads is cheap and safe. A
//! computation graph, when one is being recorded, lives in a thread-local
//! tape (see [`autograd`]); every public operation checks its output for
//! NaN/Inf and reports a structured error instead of letting one propagate.

pub mod autograd;
pub mod gradcheck;
pub mod ops;
pub mod scalar;
#[doc(hidden)]
pub mod tape;

use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use scalar::Scalar;

/// (batch, channel, height, width), row-major.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Flat index of (n, c, h, w).
    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn is_scalar(&self) -> bool {
        *self == Shape::new(1, 1, 1, 1)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

pub(crate) type GradSlot<T> = Arc<Mutex<Option<Vec<T>>>>;

/// Reference into the tape that recorded this tensor, tagged with the tape
/// generation so stale handles from a previous step are ignored.
#[derive(Clone, Copy, Debug)]
pub(crate) struct NodeRef {
    pub generation: u64,
    pub id: usize,
}

#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    shape: Shape,
    data: Arc<Vec<T>>,
    pub(crate) node: Option<NodeRef>,
    pub(crate) grad: Option<GradSlot<T>>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from a row-major buffer. The length must match the
    /// shape and every value must be finite.
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Tensor<T>> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "from_vec",
                format!("buffer length {} != numel of {shape}", data.len()),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "from_vec" });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            node: None,
            grad: None,
        })
    }

    pub fn zeros(shape: Shape) -> Tensor<T> {
        Tensor {
            shape,
            data: Arc::new(vec![T::ZERO; shape.numel()]),
            node: None,
            grad: None,
        }
    }

    pub fn full(shape: Shape, value: T) -> Result<Tensor<T>> {
        Tensor::from_vec(shape, vec![value; shape.numel()])
    }

    pub fn scalar(value: T) -> Result<Tensor<T>> {
        Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![value])
    }

    /// Independent Gaussian samples. Identical (shape, mean, std, seed)
    /// yield a bit-identical tensor; see [`crate::rng`] for the generator.
    pub fn randn(shape: Shape, mean: f64, std: f64, seed: u64) -> Result<Tensor<T>> {
        if !(std > 0.0) {
            return Err(Error::invalid("randn", format!("std must be > 0, got {std}")));
        }
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::invalid(
                "randn",
                format!("shape components must be >= 1, got {shape}"),
            ));
        }
        let mut rng = Rng::new(seed);
        let data = (0..shape.numel())
            .map(|_| T::from_f64(mean + std * rng.next_gauss()))
            .collect();
        Tensor::from_vec(shape, data)
    }

    /// Marks this tensor as trainable: backward passes will populate its
    /// gradient slot. Meant for leaves (parameters, probe inputs).
    pub fn requires_grad(mut self) -> Tensor<T> {
        if self.grad.is_none() {
            self.grad = Some(Arc::new(Mutex::new(None)));
        }
        self
    }

    pub fn is_trainable(&self) -> bool {
        self.grad.is_some()
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.grad.as_ref().and_then(|slot| slot.lock().unwrap().clone())
    }

    pub fn zero_grad(&self) {
        if let Some(slot) = &self.grad {
            *slot.lock().unwrap() = None;
        }
    }

    /// Same data, no graph handle, no gradient slot.
    pub fn detach(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.clone(),
            node: None,
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.at(n, c, h, w)]
    }

    /// Value of a (1,1,1,1) tensor.
    pub fn item(&self) -> Result<T> {
        if !self.shape.is_scalar() {
            return Err(Error::shape(
                "item",
                format!("expected scalar shape, got {}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    /// Replaces the buffer in place (same shape), e.g. an optimizer update.
    /// Other clones sharing the old buffer are unaffected.
    pub fn set_data(&mut self, data: Vec<T>) -> Result<()> {
        if data.len() != self.shape.numel() {
            return Err(Error::shape(
                "set_data",
                format!("buffer length {} != numel of {}", data.len(), self.shape),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "set_data" });
        }
        self.data = Arc::new(data);
        self.node = None;
        Ok(())
    }

    /// Stacks single-sample tensors along the batch axis. Pure data
    /// movement; never recorded on a tape.
    pub fn stack_batch(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack_batch", "empty batch"))?;
        let s = first.shape();
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n_total = 0;
        for t in items {
            if t.shape().c != s.c || t.shape().h != s.h || t.shape().w != s.w {
                return Err(Error::shape(
                    "stack_batch",
                    format!("mismatched item shapes {} vs {}", t.shape(), s),
                ));
            }
            n_total += t.shape().n;
            data.extend_from_slice(t.data());
        }
        Tensor::from_vec(Shape::new(n_total, s.c, s.h, s.w), data)
    }

    /// View of batch item `i` as a (1,c,h,w) tensor.
    pub fn batch_item(&self, i: usize) -> Result<Tensor<T>> {
        if i >= self.shape.n {
            return Err(Error::invalid(
                "batch_item",
                format!("index {i} out of range for batch {}", self.shape.n),
            ));
        }
        let per = self.shape.c * self.shape.h * self.shape.w;
        let data = self.data[i * per..(i + 1) * per].to_vec();
        Tensor::from_vec(Shape::new(1, self.shape.c, self.shape.h, self.shape.w), data)
    }

    /// Largest element. Errors on empty tensors.
    pub fn max_value(&self) -> Result<T> {
        self.data
            .iter()
            .copied()
            .fold(None, |acc: Option<T>, v| {
                Some(match acc {
                    None => v,
                    Some(a) => a.maximum(v),
                })
            })
            .ok_or_else(|| Error::invalid("max_value", "empty tensor"))
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        self.data.clone()
    }

    pub(crate) fn from_parts(shape: Shape, data: Arc<Vec<T>>, node: Option<NodeRef>) -> Tensor<T> {
        Tensor {
            shape,
            data,
            node,
            grad: None,
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor({}, tracked={}, trainable={})",
            self.shape,
            self.node.is_some(),
            self.grad.is_some()
        )
    }
}
