//! Noise injection: normalization of images and weighted blending with
//! Gaussian noise, for training and inference alike, plus the multiscale
//! input pyramid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ops, Scalar, Tensor};

/// Which space the blend happens in.
///
/// `Raw` draws noise around mid-gray in pixel space and normalizes the
/// blended result; because normalization is affine, this equals blending
/// normalized data with standard-normal noise. `NormalizedLiteral` blends
/// the mid-gray noise directly into already-normalized data instead.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSpace {
    #[default]
    Raw,
    NormalizedLiteral,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Blend weight of the noise; 0 disables corruption entirely.
    pub lambda: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub norm_mean: f64,
    pub norm_std: f64,
    /// Independent noise draws averaged at inference time.
    pub inference_draws: usize,
    pub noise_space: NoiseSpace,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            lambda: 0.3,
            noise_mean: 0.5,
            noise_std: 0.5,
            norm_mean: 0.5,
            norm_std: 0.5,
            inference_draws: 1,
            noise_space: NoiseSpace::Raw,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "noise.lambda must lie in [0, 1), got {}",
                self.lambda
            )));
        }
        if !(self.noise_std > 0.0) {
            return Err(Error::Config(format!(
                "noise.noise_std must be > 0, got {}",
                self.noise_std
            )));
        }
        if !(self.norm_std > 0.0) {
            return Err(Error::Config(format!(
                "noise.norm_std must be > 0, got {}",
                self.norm_std
            )));
        }
        if self.inference_draws == 0 {
            return Err(Error::Config("noise.inference_draws must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-channel affine map (v - norm_mean) / norm_std.
pub fn normalize<T: Scalar>(img_raw: &Tensor<T>, cfg: &NoiseConfig) -> Result<Tensor<T>> {
    let shifted = ops::add_scalar(img_raw, -cfg.norm_mean)?;
    ops::scale(&shifted, 1.0 / cfg.norm_std)
}

/// Exact inverse of [`normalize`]. No clamping: pixel values are clamped to
/// [0, 1] only when an image is exported, never inside the pipeline.
pub fn denormalize<T: Scalar>(x: &Tensor<T>, cfg: &NoiseConfig) -> Result<Tensor<T>> {
    let scaled = ops::scale(x, cfg.norm_std)?;
    ops::add_scalar(&scaled, cfg.norm_mean)
}

/// Corrupts a raw [0,1] image with blended Gaussian noise.
///
/// Returns `(x0, x_noisy)`, both in normalized space: `x0` is the clean
/// reconstruction target, `x_noisy` the network input. The blend itself is
/// `(1 - lambda) * image + lambda * noise`, evaluated in the space selected
/// by `cfg.noise_space`. The input is never modified.
pub fn inject_noise<T: Scalar>(
    img_raw: &Tensor<T>,
    cfg: &NoiseConfig,
    seed: u64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let x0 = normalize(img_raw, cfg)?;
    let noise = Tensor::randn(img_raw.shape(), cfg.noise_mean, cfg.noise_std, seed)?;
    let x_noisy = match cfg.noise_space {
        NoiseSpace::Raw => {
            let blended = ops::blend(cfg.lambda, img_raw, &noise)?;
            normalize(&blended, cfg)?
        }
        NoiseSpace::NormalizedLiteral => ops::blend(cfg.lambda, &x0, &noise)?,
    };
    Ok((x0, x_noisy))
}

/// Bilinear pyramid: scale i is (h / 2^i, w / 2^i); scale 0 is the input
/// itself, untouched.
pub fn make_multiscale<T: Scalar>(x_noisy: &Tensor<T>, num_scales: usize) -> Result<Vec<Tensor<T>>> {
    if num_scales == 0 {
        return Err(Error::invalid("make_multiscale", "num_scales must be >= 1"));
    }
    let s = x_noisy.shape();
    let factor = 1usize << (num_scales - 1);
    if s.h % factor != 0 || s.w % factor != 0 {
        return Err(Error::shape(
            "make_multiscale",
            format!(
                "spatial dims {}x{} not divisible by 2^(num_scales-1) = {factor}",
                s.h, s.w
            ),
        ));
    }
    let mut scales = Vec::with_capacity(num_scales);
    scales.push(x_noisy.clone());
    for i in 1..num_scales {
        let d = 1usize << i;
        scales.push(ops::bilinear_resize(x_noisy, s.h / d, s.w / d)?);
    }
    Ok(scales)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn raw(vals: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 1, vals.len()), vals.to_vec()).unwrap()
    }

    #[test]
    fn normalize_default_anchors() {
        let cfg = NoiseConfig::default();
        let x = raw(&[0.5, 1.0, 0.0]);
        let y = normalize(&x, &cfg).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, -1.0]);
    }

    #[test]
    fn normalize_round_trip() {
        let cfg = NoiseConfig::default();
        let x = Tensor::<f64>::randn(Shape::new(1, 3, 8, 8), 0.5, 0.2, 4).unwrap();
        let y = denormalize(&normalize(&x, &cfg).unwrap(), &cfg).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn lambda_zero_leaves_input_clean() {
        let cfg = NoiseConfig {
            lambda: 0.0,
            ..NoiseConfig::default()
        };
        let x = raw(&[0.25, 0.75]);
        let (x0, x_noisy) = inject_noise(&x, &cfg, 99).unwrap();
        assert_eq!(x0.data(), x_noisy.data());
    }

    #[test]
    fn blend_commutes_with_normalization() {
        // Normalizing the raw blend must equal blending the normalized
        // image with the normalized noise: affine maps commute with convex
        // combinations.
        let cfg = NoiseConfig::default();
        let x = Tensor::<f64>::randn(Shape::new(1, 3, 6, 6), 0.5, 0.1, 5).unwrap();
        let (x0, x_noisy) = inject_noise(&x, &cfg, 123).unwrap();
        let noise = Tensor::<f64>::randn(x.shape(), cfg.noise_mean, cfg.noise_std, 123).unwrap();
        let noise_norm = normalize(&noise, &cfg).unwrap();
        let alt = ops::blend(cfg.lambda, &x0, &noise_norm).unwrap();
        for (a, b) in x_noisy.data().iter().zip(alt.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn seeds_control_noise() {
        let cfg = NoiseConfig::default();
        let x = Tensor::<f64>::full(Shape::new(1, 1, 4, 4), 0.5).unwrap();
        let (_, a) = inject_noise(&x, &cfg, 1).unwrap();
        let (_, b) = inject_noise(&x, &cfg, 1).unwrap();
        let (_, c) = inject_noise(&x, &cfg, 2).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn noisy_moments_of_constant_image() {
        // In raw space a constant image c blends to mean (1-l)c + l*0.5 and
        // std l*0.5; checked against Monte-Carlo bounds.
        let cfg = NoiseConfig::default();
        let c = 0.8;
        let x = Tensor::<f64>::full(Shape::new(1, 1, 256, 256), c).unwrap();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut count = 0.0;
        for seed in 0..8u64 {
            let blended = ops::blend(
                cfg.lambda,
                &x,
                &Tensor::randn(x.shape(), cfg.noise_mean, cfg.noise_std, 700 + seed).unwrap(),
            )
            .unwrap();
            for &v in blended.data() {
                sum += v;
                sumsq += v * v;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let std = (sumsq / count - mean * mean).sqrt();
        let want_mean = (1.0 - cfg.lambda) * c + cfg.lambda * 0.5;
        let want_std = cfg.lambda * 0.5;
        assert!((mean - want_mean).abs() < 3.0 * want_std / count.sqrt() + 1e-3);
        assert!((std - want_std).abs() < 2e-3, "std {std} want {want_std}");
    }

    #[test]
    fn multiscale_sizes() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 64, 64));
        let scales = make_multiscale(&x, 4).unwrap();
        let sizes: Vec<usize> = scales.iter().map(|t| t.shape().h).collect();
        assert_eq!(sizes, vec![64, 32, 16, 8]);

        let single = make_multiscale(&x, 1).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].data(), x.data());
    }

    #[test]
    fn multiscale_rejects_indivisible() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 50, 50));
        assert!(make_multiscale(&x, 4).is_err());
        let y = Tensor::<f32>::zeros(Shape::new(1, 3, 48, 44));
        assert!(make_multiscale(&y, 4).is_err());
    }

    #[test]
    fn input_is_not_mutated() {
        let cfg = NoiseConfig::default();
        let x = raw(&[0.1, 0.9]);
        let before = x.data().to_vec();
        let _ = inject_noise(&x, &cfg, 7).unwrap();
        assert_eq!(x.data(), &before[..]);
    }
}
