//! Central finite-difference verification of analytic gradients.

use super::{autograd, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Compares backward-pass gradients of a scalar-valued function against
/// central finite differences on a random subsample of coordinates (at
/// least 64, or every coordinate when there are fewer). Returns the largest
/// relative error observed.
///
/// `f` must be deterministic. Run this in `f64`: the difference quotient in
/// `f32` is too noisy to certify anything near 1e-4.
pub fn finite_diff_check<T: Scalar>(
    f: impl Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
    inputs: &[Tensor<T>],
    step: f64,
    seed: u64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::invalid(
            "finite_diff_check",
            format!("step must be > 0, got {step}"),
        ));
    }
    if inputs.is_empty() {
        return Err(Error::invalid("finite_diff_check", "no inputs supplied"));
    }

    // Analytic gradients from one recorded pass.
    let tracked: Vec<Tensor<T>> = inputs.iter().map(|t| t.detach().requires_grad()).collect();
    autograd::start_graph::<T>()?;
    let out = match f(&tracked) {
        Ok(v) => v,
        Err(e) => {
            autograd::clear_graph::<T>();
            return Err(e);
        }
    };
    if !out.shape().is_scalar() {
        autograd::clear_graph::<T>();
        return Err(Error::invalid(
            "finite_diff_check",
            format!("f must return a scalar tensor, got {}", out.shape()),
        ));
    }
    autograd::backward(&out)?;
    let analytic: Vec<Vec<T>> = tracked
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![T::ZERO; t.numel()]))
        .collect();

    // Coordinate subsample: 64 coordinates, or all of them when fewer.
    let total: usize = inputs.iter().map(|t| t.numel()).sum();
    let n_samples = total.min(64);
    let mut rng = Rng::new(seed);
    let mut coords: Vec<usize> = if total <= n_samples {
        (0..total).collect()
    } else {
        let mut all: Vec<usize> = (0..total).collect();
        rng.shuffle(&mut all);
        all.truncate(n_samples);
        all
    };
    coords.sort_unstable();

    let eval = |probe: &[Tensor<T>]| -> Result<f64> {
        let y = f(probe)?;
        Ok(y.item()?.to_f64())
    };

    let mut max_rel = 0.0f64;
    for flat in coords {
        // Locate (tensor index, element index).
        let mut rem = flat;
        let mut ti = 0;
        while rem >= inputs[ti].numel() {
            rem -= inputs[ti].numel();
            ti += 1;
        }

        let mut probe: Vec<Tensor<T>> = inputs.iter().map(|t| t.detach()).collect();
        let base = inputs[ti].data().to_vec();

        let mut plus = base.clone();
        plus[rem] += T::from_f64(step);
        probe[ti].set_data(plus)?;
        let f_plus = eval(&probe)?;

        let mut minus = base;
        minus[rem] -= T::from_f64(step);
        probe[ti].set_data(minus)?;
        let f_minus = eval(&probe)?;

        let numeric = (f_plus - f_minus) / (2.0 * step);
        let exact = analytic[ti][rem].to_f64();
        let scale = exact.abs().max(numeric.abs());
        if scale < 1e-10 {
            continue; // both effectively zero at fd resolution
        }
        let rel = (exact - numeric).abs() / scale;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

/// Result of one registered-op check.
pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

/// Runs the finite-difference suite over every registered operation at
/// small shapes. Inputs are sampled away from the kinks of relu/prelu/abs,
/// where a difference quotient straddling the corner says nothing about
/// the analytic gradient.
pub fn check_registered_ops() -> Result<Vec<OpCheck>> {
    use super::ops;
    use super::Shape;

    type T = f64;
    const STEP: f64 = 1e-4;

    // Keep |x| comfortably above STEP for kinked ops.
    fn away_from_zero(shape: Shape, seed: u64) -> Tensor<T> {
        let mut rng = Rng::new(seed);
        let data = (0..shape.numel())
            .map(|_| {
                let sign = if rng.below(2) == 0 { 1.0 } else { -1.0 };
                sign * rng.uniform(0.2, 1.0)
            })
            .collect();
        Tensor::from_vec(shape, data).expect("finite by construction")
    }

    fn smooth(shape: Shape, seed: u64) -> Tensor<T> {
        Tensor::randn(shape, 0.0, 0.7, seed).expect("valid randn")
    }

    // Project to a scalar through an uncorrelated fixed direction so flat
    // spots in a plain sum cannot hide sign errors.
    fn probe_sum(t: &Tensor<T>, seed: u64) -> Result<Tensor<T>> {
        let dir = Tensor::randn(t.shape(), 0.0, 1.0, seed)?;
        ops::sum_all(&ops::mul(t, &dir)?)
    }

    let s = Shape::new(2, 3, 5, 5);
    let gate_s = Shape::new(2, 3, 1, 1);
    let mut out = Vec::new();
    let mut run = |name: &'static str,
                   inputs: Vec<Tensor<T>>,
                   f: Box<dyn Fn(&[Tensor<T>]) -> Result<Tensor<T>>>|
     -> Result<()> {
        let err = finite_diff_check(|xs| f(xs), &inputs, STEP, 17)?;
        out.push(OpCheck {
            name,
            max_rel_err: err,
        });
        Ok(())
    };

    run(
        "relu",
        vec![away_from_zero(s, 1)],
        Box::new(|xs| probe_sum(&ops::relu(&xs[0])?, 100)),
    )?;
    run(
        "prelu",
        vec![away_from_zero(s, 2), Tensor::scalar(0.25)?],
        Box::new(|xs| probe_sum(&ops::prelu(&xs[0], &xs[1])?, 101)),
    )?;
    run(
        "sigmoid",
        vec![smooth(s, 3)],
        Box::new(|xs| probe_sum(&ops::sigmoid(&xs[0])?, 102)),
    )?;
    run(
        "add",
        vec![smooth(s, 4), smooth(s, 5)],
        Box::new(|xs| probe_sum(&ops::add(&xs[0], &xs[1])?, 103)),
    )?;
    run(
        "sub",
        vec![smooth(s, 6), smooth(s, 7)],
        Box::new(|xs| probe_sum(&ops::sub(&xs[0], &xs[1])?, 104)),
    )?;
    run(
        "mul",
        vec![smooth(s, 8), smooth(s, 9)],
        Box::new(|xs| probe_sum(&ops::mul(&xs[0], &xs[1])?, 105)),
    )?;
    run(
        "div",
        vec![smooth(s, 10), away_from_zero(s, 11)],
        Box::new(|xs| probe_sum(&ops::div(&xs[0], &xs[1])?, 106)),
    )?;
    run(
        "scale",
        vec![smooth(s, 12)],
        Box::new(|xs| probe_sum(&ops::scale(&xs[0], -1.7)?, 107)),
    )?;
    run(
        "add_scalar",
        vec![smooth(s, 13)],
        Box::new(|xs| probe_sum(&ops::add_scalar(&xs[0], 0.4)?, 108)),
    )?;
    run(
        "blend",
        vec![smooth(s, 14), smooth(s, 15)],
        Box::new(|xs| probe_sum(&ops::blend(0.3, &xs[0], &xs[1])?, 109)),
    )?;
    run(
        "exp",
        vec![smooth(s, 16)],
        Box::new(|xs| probe_sum(&ops::exp(&xs[0])?, 110)),
    )?;
    run(
        "abs",
        vec![away_from_zero(s, 17)],
        Box::new(|xs| probe_sum(&ops::abs(&xs[0])?, 111)),
    )?;
    run(
        "global_avg_pool",
        vec![smooth(s, 18)],
        Box::new(|xs| probe_sum(&ops::global_avg_pool(&xs[0])?, 112)),
    )?;
    run(
        "mean_channels",
        vec![smooth(s, 19)],
        Box::new(|xs| probe_sum(&ops::mean_channels(&xs[0])?, 113)),
    )?;
    run(
        "mean_all",
        vec![smooth(s, 20)],
        Box::new(|xs| ops::mean_all(&xs[0])),
    )?;
    run(
        "sum_all",
        vec![smooth(s, 21)],
        Box::new(|xs| ops::sum_all(&xs[0])),
    )?;
    run(
        "mul_broadcast",
        vec![smooth(s, 22), smooth(gate_s, 23)],
        Box::new(|xs| probe_sum(&ops::mul_broadcast(&xs[0], &xs[1])?, 114)),
    )?;
    run(
        "concat_channels",
        vec![smooth(Shape::new(2, 2, 4, 4), 24), smooth(Shape::new(2, 3, 4, 4), 25)],
        Box::new(|xs| probe_sum(&ops::concat_channels(&[&xs[0], &xs[1]])?, 115)),
    )?;
    run(
        "branch_softmax",
        vec![smooth(Shape::new(1, 2, 3, 3), 26), smooth(Shape::new(1, 2, 3, 3), 27)],
        Box::new(|xs| {
            let parts = ops::branch_softmax(&[xs[0].clone(), xs[1].clone()])?;
            let a = probe_sum(&parts[0], 116)?;
            let b = probe_sum(&parts[1], 117)?;
            ops::add(&a, &b)
        }),
    )?;
    run(
        "pixel_shuffle",
        vec![smooth(Shape::new(1, 8, 3, 3), 28)],
        Box::new(|xs| probe_sum(&ops::pixel_shuffle(&xs[0], 2)?, 118)),
    )?;
    run(
        "pixel_unshuffle",
        vec![smooth(Shape::new(1, 2, 6, 6), 29)],
        Box::new(|xs| probe_sum(&ops::pixel_unshuffle(&xs[0], 2)?, 119)),
    )?;
    run(
        "bilinear_resize_up",
        vec![smooth(Shape::new(1, 2, 4, 4), 30)],
        Box::new(|xs| probe_sum(&ops::bilinear_resize(&xs[0], 7, 9)?, 120)),
    )?;
    run(
        "bilinear_resize_down",
        vec![smooth(Shape::new(1, 2, 8, 8), 31)],
        Box::new(|xs| probe_sum(&ops::bilinear_resize(&xs[0], 3, 5)?, 121)),
    )?;
    run(
        "gaussian_blur",
        vec![smooth(Shape::new(1, 2, 6, 6), 32)],
        Box::new(|xs| probe_sum(&ops::gaussian_blur(&xs[0], 1.5)?, 122)),
    )?;
    run(
        "gaussian_blur_wide",
        vec![smooth(Shape::new(1, 1, 5, 5), 33)],
        Box::new(|xs| probe_sum(&ops::gaussian_blur(&xs[0], 4.0)?, 123)),
    )?;

    let conv_x = smooth(Shape::new(2, 3, 6, 6), 34);
    let conv_w = smooth(Shape::new(4, 3, 3, 3), 35);
    let conv_b = smooth(Shape::new(1, 4, 1, 1), 36);
    run(
        "conv2d_zero_pad",
        vec![conv_x.clone(), conv_w.clone(), conv_b.clone()],
        Box::new(|xs| {
            probe_sum(
                &ops::conv2d(&xs[0], &xs[1], &xs[2], 1, 1, ops::PadMode::Zero)?,
                124,
            )
        }),
    )?;
    run(
        "conv2d_reflect_pad",
        vec![conv_x.clone(), conv_w.clone(), conv_b.clone()],
        Box::new(|xs| {
            probe_sum(
                &ops::conv2d(&xs[0], &xs[1], &xs[2], 1, 1, ops::PadMode::Reflect)?,
                125,
            )
        }),
    )?;
    run(
        "conv2d_stride2",
        vec![conv_x, conv_w, conv_b],
        Box::new(|xs| {
            probe_sum(
                &ops::conv2d(&xs[0], &xs[1], &xs[2], 2, 1, ops::PadMode::Reflect)?,
                126,
            )
        }),
    )?;

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;
    use crate::tensor::Shape;

    #[test]
    fn registered_ops_pass_finite_difference() {
        let checks = check_registered_ops().unwrap();
        assert!(checks.len() >= 25);
        for c in checks {
            assert!(
                c.max_rel_err < 1e-4,
                "{}: relative error {}",
                c.name,
                c.max_rel_err
            );
        }
    }

    #[test]
    fn linear_function_has_zero_error() {
        let x = Tensor::<f64>::randn(Shape::new(1, 1, 3, 3), 0.0, 1.0, 3).unwrap();
        let err = finite_diff_check(|xs| ops::sum_all(&xs[0]), &[x], 1e-4, 5).unwrap();
        assert!(err < 1e-9, "error {err}");
    }

    #[test]
    fn quadratic_function_checks_out() {
        let x = Tensor::<f64>::randn(Shape::new(1, 2, 4, 4), 0.0, 1.0, 8).unwrap();
        let err = finite_diff_check(
            |xs| ops::sum_all(&ops::mul(&xs[0], &xs[0])?),
            &[x],
            1e-4,
            5,
        )
        .unwrap();
        assert!(err < 1e-8, "error {err}");
    }

    #[test]
    fn zero_step_is_invalid() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 1, 1));
        assert!(finite_diff_check(|xs| ops::sum_all(&xs[0]), &[x], 0.0, 5).is_err());
    }
}
