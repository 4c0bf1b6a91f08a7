//! Structural-similarity maps, the training losses built on them, and the
//! inference-time anomaly map.
//!
//! Multi-scale SSIM here means one resolution filtered by a family of
//! Gaussian windows of increasing sigma: the luminance term comes from the
//! widest window only, the contrast-structure terms multiply across all of
//! them, every exponent fixed at one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ops, Scalar, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    /// Gaussian window sigmas, strictly increasing.
    pub sigmas: Vec<f64>,
    pub k1: f64,
    pub k2: f64,
    /// Value span of the compared tensors; 2 for normalized [-1, 1] data.
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            sigmas: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 2.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn largest_sigma(&self) -> f64 {
        *self.sigmas.last().expect("validated non-empty")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(Error::Config("ssim.sigmas must not be empty".into()));
        }
        if !self.sigmas.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "ssim.sigmas must be strictly increasing".into(),
            ));
        }
        if !(self.sigmas[0] > 0.0) {
            return Err(Error::Config("ssim.sigmas must be positive".into()));
        }
        if !(self.c1() > 0.0) || !(self.c2() > 0.0) {
            return Err(Error::Config(
                "ssim constants c1, c2 must be positive; check k1, k2, dynamic_range".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the MS-SSIM term; the Gaussian-filtered l1 term gets the
    /// complement.
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.84 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "loss.alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Normalized 2-D Gaussian weight table, radius ceil(3*sigma). The center
/// holds the maximum; the table is symmetric under 90-degree rotation and
/// sums to one.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<Vec<f64>>> {
    let taps = ops::gaussian_kernel_1d(sigma)?;
    Ok(taps
        .iter()
        .map(|&ki| taps.iter().map(|&kj| ki * kj).collect())
        .collect())
}

/// Per-pixel luminance and contrast-structure factors under one Gaussian
/// window, channels kept separate: shapes match the inputs.
pub fn ssim_components<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    sigma: f64,
    p: &SsimParams,
) -> Result<(Tensor<T>, Tensor<T>)> {
    ops::check_same_shape("ssim_components", x, y)?;
    let stats = WindowStats::compute(x, y, sigma)?;
    let l = stats.luminance(p)?;
    let cs = stats.contrast_structure(p)?;
    Ok((l, cs))
}

/// Gaussian-window means/variances/covariance shared by the SSIM factors.
struct WindowStats<T: Scalar> {
    mu_x: Tensor<T>,
    mu_y: Tensor<T>,
    var_x: Tensor<T>,
    var_y: Tensor<T>,
    cov_xy: Tensor<T>,
}

impl<T: Scalar> WindowStats<T> {
    fn compute(x: &Tensor<T>, y: &Tensor<T>, sigma: f64) -> Result<WindowStats<T>> {
        let mu_x = ops::gaussian_blur(x, sigma)?;
        let mu_y = ops::gaussian_blur(y, sigma)?;
        let e_xx = ops::gaussian_blur(&ops::mul(x, x)?, sigma)?;
        let e_yy = ops::gaussian_blur(&ops::mul(y, y)?, sigma)?;
        let e_xy = ops::gaussian_blur(&ops::mul(x, y)?, sigma)?;
        let var_x = ops::sub(&e_xx, &ops::mul(&mu_x, &mu_x)?)?;
        let var_y = ops::sub(&e_yy, &ops::mul(&mu_y, &mu_y)?)?;
        let cov_xy = ops::sub(&e_xy, &ops::mul(&mu_x, &mu_y)?)?;
        Ok(WindowStats {
            mu_x,
            mu_y,
            var_x,
            var_y,
            cov_xy,
        })
    }

    /// (2 mu_x mu_y + c1) / (mu_x^2 + mu_y^2 + c1)
    fn luminance(&self, p: &SsimParams) -> Result<Tensor<T>> {
        let c1 = p.c1();
        let num = ops::add_scalar(&ops::scale(&ops::mul(&self.mu_x, &self.mu_y)?, 2.0)?, c1)?;
        let den = ops::add_scalar(
            &ops::add(
                &ops::mul(&self.mu_x, &self.mu_x)?,
                &ops::mul(&self.mu_y, &self.mu_y)?,
            )?,
            c1,
        )?;
        ops::div(&num, &den)
    }

    /// (2 cov_xy + c2) / (var_x + var_y + c2)
    fn contrast_structure(&self, p: &SsimParams) -> Result<Tensor<T>> {
        let c2 = p.c2();
        let num = ops::add_scalar(&ops::scale(&self.cov_xy, 2.0)?, c2)?;
        let den = ops::add_scalar(&ops::add(&self.var_x, &self.var_y)?, c2)?;
        ops::div(&num, &den)
    }
}

/// Per-pixel product l_M * prod_j cs_j over the sigma family, then averaged
/// across channels: (n, 1, h, w).
pub fn ms_ssim_map<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, p: &SsimParams) -> Result<Tensor<T>> {
    ops::check_same_shape("ms_ssim_map", x, y)?;
    p.validate()?;
    let mut product: Option<Tensor<T>> = None;
    let last = p.sigmas.len() - 1;
    for (j, &sigma) in p.sigmas.iter().enumerate() {
        let stats = WindowStats::compute(x, y, sigma)?;
        let cs = stats.contrast_structure(p)?;
        let mut factor = cs;
        if j == last {
            factor = ops::mul(&factor, &stats.luminance(p)?)?;
        }
        product = Some(match product {
            None => factor,
            Some(acc) => ops::mul(&acc, &factor)?,
        });
    }
    ops::mean_channels(&product.expect("at least one sigma"))
}

/// Mean over pixels of 1 - MS-SSIM(p).
pub fn ms_ssim_loss<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, p: &SsimParams) -> Result<Tensor<T>> {
    let map = ms_ssim_map(x, y, p)?;
    ops::mean_all(&ops::add_scalar(&ops::scale(&map, -1.0)?, 1.0)?)
}

/// alpha * L_msssim + (1 - alpha) * mean(G_sigmaM * |x - y|).
pub fn mix_loss<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    p: &SsimParams,
    cfg: &LossConfig,
) -> Result<Tensor<T>> {
    ops::check_same_shape("mix_loss", x, y)?;
    cfg.validate()?;
    let ms = ms_ssim_loss(x, y, p)?;
    let l1_blurred = ops::gaussian_blur(&ops::abs(&ops::sub(x, y)?)?, p.largest_sigma())?;
    let l1 = ops::mean_all(&l1_blurred)?;
    ops::add(
        &ops::scale(&ms, cfg.alpha)?,
        &ops::scale(&l1, 1.0 - cfg.alpha)?,
    )
}

/// Per-pixel anomaly scores plus the image-level score (their maximum).
#[derive(Clone, Debug)]
pub struct AnomalyMap<T: Scalar> {
    /// (1, 1, h, w) or (n, 1, h, w) score map, non-negative.
    pub map: Tensor<T>,
    pub image_score: T,
}

/// Scores reconstruction error per pixel: the alpha-weighted sum of the
/// MS-SSIM dissimilarity and the Gaussian-filtered l1 residual, channel
/// averaged, then smoothed. `smooth_sigma <= 0` skips the final smoothing.
pub fn anomaly_map<T: Scalar>(
    original_x0: &Tensor<T>,
    reconstruction: &Tensor<T>,
    p: &SsimParams,
    cfg: &LossConfig,
    smooth_sigma: f64,
) -> Result<AnomalyMap<T>> {
    ops::check_same_shape("anomaly_map", original_x0, reconstruction)?;
    let ms = ms_ssim_map(original_x0, reconstruction, p)?;
    let dissim = ops::add_scalar(&ops::scale(&ms, -1.0)?, 1.0)?;
    let l1 = ops::mean_channels(&ops::gaussian_blur(
        &ops::abs(&ops::sub(original_x0, reconstruction)?)?,
        p.largest_sigma(),
    )?)?;
    let combined = ops::add(
        &ops::scale(&dissim, cfg.alpha)?,
        &ops::scale(&l1, 1.0 - cfg.alpha)?,
    )?;
    let smoothed = if smooth_sigma > 0.0 {
        ops::gaussian_blur(&combined, smooth_sigma)?
    } else {
        combined
    };
    // Rounding can push an exact zero a hair negative; the detached clamp
    // happens outside any gradient path.
    let data = smoothed
        .data()
        .iter()
        .map(|&v| v.maximum(T::ZERO))
        .collect();
    let map = Tensor::from_vec(smoothed.shape(), data)?;
    let image_score = map.max_value()?;
    Ok(AnomalyMap { map, image_score })
}
