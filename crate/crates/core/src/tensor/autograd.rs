//! Graph lifetime control.
//!
//! A graph is recorded dynamically per forward pass on the current thread
//! and freed when [`backward`] runs (or [`clear_graph`] aborts it). One
//! training step therefore owns exactly one graph on one thread.

pub use super::tape::{backward, clear_graph, graph_active, start_graph};

use super::{Scalar, Tensor};
use crate::error::Result;

/// Records `f` on a fresh graph and runs backward from the scalar it
/// returns. The graph is freed on every path.
pub fn grad_of<T: Scalar, R>(f: impl FnOnce() -> Result<(Tensor<T>, R)>) -> Result<(Tensor<T>, R)> {
    start_graph::<T>()?;
    let out = f();
    match out {
        Ok((root, extra)) => match backward(&root) {
            Ok(()) => Ok((root, extra)),
            Err(e) => Err(e),
        },
        Err(e) => {
            clear_graph::<T>();
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .requires_grad();
        start_graph::<f64>().unwrap();
        let s = ops::sum_all(&x).unwrap();
        backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn product_gradient_is_two_x() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, -2.0, 0.5])
            .unwrap()
            .requires_grad();
        start_graph::<f64>().unwrap();
        let sq = ops::mul(&x, &x).unwrap();
        let s = ops::sum_all(&sq).unwrap();
        backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn gradients_accumulate_over_multiple_uses() {
        // y = sum(x) + sum(x) -> grad should be 2 everywhere.
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2), vec![3.0, 4.0])
            .unwrap()
            .requires_grad();
        start_graph::<f64>().unwrap();
        let a = ops::sum_all(&x).unwrap();
        let b = ops::sum_all(&x).unwrap();
        let s = ops::add(&a, &b).unwrap();
        backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 2.0])
            .unwrap()
            .requires_grad();
        start_graph::<f64>().unwrap();
        let y = ops::scale(&x, 2.0).unwrap();
        assert!(backward(&y).is_err());
        // The failed backward still freed the graph.
        assert!(!graph_active::<f64>());
    }

    #[test]
    fn graph_is_freed_after_backward() {
        let x = Tensor::<f64>::scalar(2.0).unwrap().requires_grad();
        start_graph::<f64>().unwrap();
        let y = ops::scale(&x, 3.0).unwrap();
        backward(&y).unwrap();
        assert!(!graph_active::<f64>());
        assert_eq!(x.grad().unwrap(), vec![3.0]);
    }
}
