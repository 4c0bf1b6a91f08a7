//! Image-level and pixel-level AUROC evaluation, per-image inference, and
//! the sweep harness for noise-coefficient / attention ablations.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::data_io::{load_image, load_mask, scan_dataset, DatasetIndex};
use crate::error::{Error, Result};
use crate::model::mnet_forward;
use crate::msssim::{anomaly_map, AnomalyMap};
use crate::noise::{inject_noise, make_multiscale};
use crate::rng::{stable_hash, Rng};
use crate::tensor::{ops, Scalar, Tensor};
use crate::training::{train, Checkpoint, EpochRecord, TrainOutcome};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub category: String,
    pub image_auroc: f64,
    pub pixel_auroc: f64,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub config_hash: String,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "category,image_auroc,pixel_auroc,n_normal,n_anomalous,config_hash";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{},{},{}",
            self.category,
            self.image_auroc,
            self.pixel_auroc,
            self.n_normal,
            self.n_anomalous,
            self.config_hash
        )
    }
}

/// Image-level aggregation: the maximum of the (already smoothed) map.
pub fn image_score<T: Scalar>(map: &AnomalyMap<T>) -> f64 {
    map.map
        .data()
        .iter()
        .map(|v| v.to_f64())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// num / den, arranged so that complementary numerators sum to exactly one:
/// the larger side is computed as one minus the smaller side's quotient.
fn tie_aware_ratio(num: f64, den: f64) -> f64 {
    if 2.0 * num > den {
        1.0 - (den - num) / den
    } else {
        num / den
    }
}

/// Exact rank-based AUROC (the Mann–Whitney statistic): concordant pairs
/// plus half the ties, over all positive/negative pairs. O(n log n).
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(
            "auroc",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid("auroc", format!("label {bad} is not 0/1")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("auroc", "scores must be finite"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(Error::invalid("auroc", "no positive (anomalous) samples"));
    }
    if neg == 0 {
        return Err(Error::invalid("auroc", "no negative (normal) samples"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Average ranks across tie groups (1-based ranks).
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let num = rank_sum_pos - (pos as f64) * (pos as f64 + 1.0) / 2.0;
    Ok(tie_aware_ratio(num, (pos * neg) as f64))
}

/// Reconstructs one raw [0,1] image and scores it. With
/// `inference_draws > 1` the maps of independent noise draws are averaged
/// before the image score is taken.
pub fn infer_anomaly_map(
    ckpt: &Checkpoint,
    raw: &Tensor<f32>,
    seed: u64,
    smooth_sigma: f64,
) -> Result<AnomalyMap<f32>> {
    let draws = ckpt.noise.inference_draws.max(1);
    let mut acc: Option<Tensor<f32>> = None;
    for d in 0..draws {
        let draw_seed = if draws == 1 {
            seed
        } else {
            Rng::derive(seed, d as u64).next_u64()
        };
        let (x0, noisy) = inject_noise(raw, &ckpt.noise, draw_seed)?;
        let scales = make_multiscale(&noisy, ckpt.model.num_scales)?;
        let recon = mnet_forward(&scales, &ckpt.params, &ckpt.model)?;
        let am = anomaly_map(&x0, &recon, &ckpt.ssim, &ckpt.loss, smooth_sigma)?;
        acc = Some(match acc {
            None => am.map,
            Some(sum) => ops::add(&sum, &am.map)?,
        });
    }
    let map = ops::scale(&acc.expect("at least one draw"), 1.0 / draws as f64)?;
    let image_score = map.max_value()?;
    Ok(AnomalyMap { map, image_score })
}

pub struct EvalOptions {
    pub image_size: usize,
    pub smooth_sigma: f64,
    pub noise_seed: u64,
    pub config_hash: String,
}

/// Scores every test image of `index` under `ckpt` and pools the results:
/// image-level AUROC over per-image max scores, pixel-level AUROC over all
/// test pixels of all images against the ground-truth masks.
///
/// Per-image noise seeds derive from the stable hash of each image's
/// category-relative path, so results do not depend on scan order.
pub fn evaluate(ckpt: &Checkpoint, index: &DatasetIndex, opts: &EvalOptions) -> Result<EvalReport> {
    if index.test.is_empty() {
        return Err(Error::Dataset("test split is empty".into()));
    }
    let mut image_scores = Vec::with_capacity(index.test.len());
    let mut image_labels = Vec::with_capacity(index.test.len());
    let mut pixel_scores = Vec::new();
    let mut pixel_labels = Vec::new();

    for entry in &index.test {
        let raw = load_image(&entry.path, opts.image_size)?;
        let seed = stable_hash(&entry.rel_path) ^ opts.noise_seed;
        let am = infer_anomaly_map(ckpt, &raw, seed, opts.smooth_sigma)?;
        image_scores.push(image_score(&am));
        image_labels.push(u8::from(entry.is_anomalous));

        let mask = match &entry.mask_path {
            Some(p) => load_mask(p, opts.image_size)?,
            None => vec![0u8; opts.image_size * opts.image_size],
        };
        if entry.is_anomalous && mask.iter().all(|&b| b == 0) {
            return Err(Error::Dataset(format!(
                "anomalous image {} has an empty mask",
                entry.rel_path
            )));
        }
        pixel_scores.extend(am.map.data().iter().map(|v| v.to_f64()));
        pixel_labels.extend_from_slice(&mask);
    }

    Ok(EvalReport {
        category: index.category.clone(),
        image_auroc: auroc(&image_scores, &image_labels)?,
        pixel_auroc: auroc(&pixel_scores, &pixel_labels)?,
        n_normal: index.test.iter().filter(|t| !t.is_anomalous).count(),
        n_anomalous: index.test.iter().filter(|t| t.is_anomalous).count(),
        config_hash: opts.config_hash.clone(),
    })
}

/// Scans the configured dataset, trains on the normal split and evaluates
/// the resulting checkpoint. The building block behind `train`/`eval`/
/// `ablate`.
pub fn train_and_evaluate(
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(TrainOutcome, EvalReport)> {
    cfg.validate()?;
    let index = scan_dataset(&cfg.data_root(), &cfg.data.category)?;
    let images = load_train_images(&index, cfg.train.image_size)?;
    let outcome = train(
        &images,
        &cfg.model,
        &cfg.noise,
        &cfg.ssim,
        &cfg.loss,
        &cfg.train,
        &mut on_epoch,
    )?;
    let report = evaluate(
        &outcome.checkpoint,
        &index,
        &EvalOptions {
            image_size: cfg.train.image_size,
            smooth_sigma: cfg.smooth_sigma(),
            noise_seed: cfg.train.noise_seed,
            config_hash: cfg.fingerprint(),
        },
    )?;
    Ok((outcome, report))
}

pub fn load_train_images(index: &DatasetIndex, size: usize) -> Result<Vec<Tensor<f32>>> {
    index.train.iter().map(|p| load_image(p, size)).collect()
}

/// One sweep: the swept key, its values (as typed on the command line) and
/// the matching reports.
pub struct SweepResult {
    pub key: String,
    pub values: Vec<String>,
    pub reports: Vec<EvalReport>,
}

impl SweepResult {
    /// One row per category, one image/pixel column pair per swept value.
    pub fn to_csv(&self) -> String {
        let mut header = String::from("category");
        for v in &self.values {
            let _ = write!(
                header,
                ",image_auroc[{k}={v}],pixel_auroc[{k}={v}]",
                k = self.key
            );
        }
        let mut row = self
            .reports
            .first()
            .map(|r| r.category.clone())
            .unwrap_or_default();
        for r in &self.reports {
            let _ = write!(row, ",{:.6},{:.6}", r.image_auroc, r.pixel_auroc);
        }
        format!("{header}\n{row}\n")
    }
}

/// Trains and evaluates one run per swept value, with shared seeds. All
/// overrides are validated before the first training step starts.
pub fn ablate(
    base: &RunConfig,
    key: &str,
    values: &[String],
    mut on_epoch: impl FnMut(usize, &EpochRecord),
) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let cfg = base.apply_override(key, v)?;
        cfg.validate()?;
        configs.push(cfg);
    }
    let mut reports = Vec::with_capacity(values.len());
    for (i, cfg) in configs.iter().enumerate() {
        let (_, report) = train_and_evaluate(cfg, |r| on_epoch(i, r))?;
        reports.push(report);
    }
    Ok(SweepResult {
        key: key.to_string(),
        values: values.to_vec(),
        reports,
    })
}
