//! Synthetic-defect dataset generator.
//!
//! Each image shows one textured "part" (a rotated superellipse filled with
//! smoothed value noise) on a dark noisy background, at a randomized
//! position, size and orientation. Anomalous images additionally carry one
//! to three defects — contrast-shifted blobs or scratches — constrained to
//! the part's footprint, with exact pixel masks. Everything is a pure
//! function of the seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{save_mask, save_rgb, RawImage};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub train: usize,
    pub test_good: usize,
    pub test_defect: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            train: 32,
            test_good: 8,
            test_defect: 16,
            size: 64,
            seed: 7,
        }
    }
}

pub const SYNTH_CATEGORY: &str = "synthetic";

const ROLE_TRAIN: u64 = 0x1000_0000;
const ROLE_TEST_GOOD: u64 = 0x2000_0000;
const ROLE_TEST_DEFECT: u64 = 0x3000_0000;

pub(crate) struct SynthItem {
    /// Interleaved RGB in [0,1].
    pub pixels: Vec<f32>,
    /// Defect mask bits, empty part for normal items.
    pub mask: Vec<u8>,
    /// Part footprint bits.
    pub footprint: Vec<u8>,
}

/// Bilinearly upsampled coarse random grid: cheap smooth texture.
fn value_noise(rng: &mut Rng, size: usize, cells: usize) -> Vec<f32> {
    let grid: Vec<f32> = (0..(cells + 1) * (cells + 1))
        .map(|_| rng.next_f64() as f32)
        .collect();
    let mut out = vec![0f32; size * size];
    for i in 0..size {
        let fy = i as f32 * cells as f32 / size as f32;
        let y0 = (fy.floor() as usize).min(cells - 1);
        let ty = fy - y0 as f32;
        for j in 0..size {
            let fx = j as f32 * cells as f32 / size as f32;
            let x0 = (fx.floor() as usize).min(cells - 1);
            let tx = fx - x0 as f32;
            let g = |y: usize, x: usize| grid[y * (cells + 1) + x];
            let top = g(y0, x0) + tx * (g(y0, x0 + 1) - g(y0, x0));
            let bot = g(y0 + 1, x0) + tx * (g(y0 + 1, x0 + 1) - g(y0 + 1, x0));
            out[i * size + j] = top + ty * (bot - top);
        }
    }
    out
}

struct Part {
    cx: f32,
    cy: f32,
    half_w: f32,
    half_h: f32,
    cos_t: f32,
    sin_t: f32,
    exponent: f32,
}

impl Part {
    /// Superellipse measure: < 1 inside, 1 on the boundary.
    fn measure(&self, x: f32, y: f32) -> f32 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * self.cos_t + dy * self.sin_t) / self.half_w;
        let v = (-dx * self.sin_t + dy * self.cos_t) / self.half_h;
        u.abs().powf(self.exponent) + v.abs().powf(self.exponent)
    }

    fn sample(rng: &mut Rng, size: usize) -> Part {
        let s = size as f32;
        let theta = rng.uniform(0.0, std::f64::consts::PI) as f32;
        Part {
            cx: s * rng.uniform(0.40, 0.60) as f32,
            cy: s * rng.uniform(0.40, 0.60) as f32,
            half_w: s * rng.uniform(0.24, 0.38) as f32,
            half_h: s * rng.uniform(0.20, 0.34) as f32,
            cos_t: theta.cos(),
            sin_t: theta.sin(),
            exponent: if rng.below(2) == 0 { 2.0 } else { 4.0 },
        }
    }
}

enum DefectKind {
    Blob,
    Scratch,
}

/// Renders one image (and its defect mask when `with_defects`).
pub(crate) fn render_item(spec: &SynthSpec, stream: u64, with_defects: bool) -> Result<SynthItem> {
    let size = spec.size;
    let mut rng = Rng::derive(spec.seed, stream);

    let part = Part::sample(&mut rng, size);
    let texture = value_noise(&mut rng, size, (size / 8).max(2));
    let bg_base = rng.uniform(0.04, 0.10) as f32;
    let tint = [
        rng.uniform(0.85, 1.0) as f32,
        rng.uniform(0.85, 1.0) as f32,
        rng.uniform(0.85, 1.0) as f32,
    ];

    let mut footprint = vec![0u8; size * size];
    let mut brightness = vec![0f32; size * size];
    for i in 0..size {
        for j in 0..size {
            let idx = i * size + j;
            let m = part.measure(j as f32 + 0.5, i as f32 + 0.5);
            if m <= 1.0 {
                footprint[idx] = 1;
                brightness[idx] = 0.40 + 0.38 * texture[idx];
            } else {
                brightness[idx] = bg_base + 0.02 * texture[idx];
            }
        }
    }

    let mut mask = vec![0u8; size * size];
    if with_defects {
        let n_defects = 1 + rng.below(3);
        let mut placed = 0;
        let mut attempts = 0;
        while placed < n_defects && attempts < 40 {
            attempts += 1;
            let kind = if rng.below(2) == 0 {
                DefectKind::Blob
            } else {
                DefectKind::Scratch
            };
            let pixels = sample_defect_pixels(&mut rng, &part, &footprint, size, &kind);
            if pixels.len() < 8 {
                continue;
            }
            // Contrast shift strong enough to read as a defect at desk
            // scale but still inside [0, 1] after clamping.
            let factor = if rng.below(2) == 0 {
                rng.uniform(0.25, 0.45) as f32
            } else {
                rng.uniform(1.55, 1.95) as f32
            };
            for &idx in &pixels {
                brightness[idx] = (brightness[idx] * factor).clamp(0.02, 0.98);
                mask[idx] = 1;
            }
            placed += 1;
        }
        if placed == 0 {
            return Err(Error::Dataset(
                "synthetic generator could not place any defect".into(),
            ));
        }
    }

    let mut pixels = vec![0f32; size * size * 3];
    for idx in 0..size * size {
        for (c, &t) in tint.iter().enumerate() {
            let v = if footprint[idx] == 1 {
                brightness[idx] * t
            } else {
                brightness[idx]
            };
            pixels[idx * 3 + c] = v.clamp(0.0, 1.0);
        }
    }
    Ok(SynthItem {
        pixels,
        mask,
        footprint,
    })
}

fn sample_defect_pixels(
    rng: &mut Rng,
    part: &Part,
    footprint: &[u8],
    size: usize,
    kind: &DefectKind,
) -> Vec<usize> {
    let s = size as f32;
    // Center well inside the part so most of the defect survives the
    // footprint intersection.
    let (cx, cy) = {
        let mut p = (part.cx, part.cy);
        for _ in 0..12 {
            let x = part.cx + (rng.uniform(-0.55, 0.55) as f32) * part.half_w;
            let y = part.cy + (rng.uniform(-0.55, 0.55) as f32) * part.half_h;
            if part.measure(x, y) < 0.55 {
                p = (x, y);
                break;
            }
        }
        p
    };
    let mut pixels = Vec::new();
    match kind {
        DefectKind::Blob => {
            let rx = s * rng.uniform(0.045, 0.10) as f32;
            let ry = s * rng.uniform(0.045, 0.10) as f32;
            let theta = rng.uniform(0.0, std::f64::consts::PI) as f32;
            let (ct, st) = (theta.cos(), theta.sin());
            for i in 0..size {
                for j in 0..size {
                    let idx = i * size + j;
                    if footprint[idx] == 0 {
                        continue;
                    }
                    let dx = j as f32 + 0.5 - cx;
                    let dy = i as f32 + 0.5 - cy;
                    let u = (dx * ct + dy * st) / rx;
                    let v = (-dx * st + dy * ct) / ry;
                    if u * u + v * v <= 1.0 {
                        pixels.push(idx);
                    }
                }
            }
        }
        DefectKind::Scratch => {
            let len = s * rng.uniform(0.18, 0.40) as f32;
            let theta = rng.uniform(0.0, std::f64::consts::PI) as f32;
            let thick = rng.uniform(1.2, 2.6) as f32;
            let (dx, dy) = (theta.cos() * len / 2.0, theta.sin() * len / 2.0);
            let (x0, y0, x1, y1) = (cx - dx, cy - dy, cx + dx, cy + dy);
            for i in 0..size {
                for j in 0..size {
                    let idx = i * size + j;
                    if footprint[idx] == 0 {
                        continue;
                    }
                    let px = j as f32 + 0.5;
                    let py = i as f32 + 0.5;
                    if segment_distance(px, py, x0, y0, x1, y1) <= thick {
                        pixels.push(idx);
                    }
                }
            }
        }
    }
    pixels
}

fn segment_distance(px: f32, py: f32, x0: f32, y0: f32, x1: f32, y1: f32) -> f32 {
    let (vx, vy) = (x1 - x0, y1 - y0);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - x0) * vx + (py - y0) * vy) / len2).clamp(0.0, 1.0)
    };
    let (nx, ny) = (x0 + t * vx, y0 + t * vy);
    ((px - nx) * (px - nx) + (py - ny) * (py - ny)).sqrt()
}

fn raw_from_pixels(size: usize, pixels: &[f32]) -> RawImage {
    RawImage {
        width: size,
        height: size,
        data: pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
    }
}

/// Writes the dataset tree under `<out_root>/synthetic/...`. Fully
/// determined by `spec.seed`; the generator post-checks that every defect
/// mask is non-empty and contained in its part footprint.
pub fn make_synthetic_dataset(out_root: &Path, spec: &SynthSpec) -> Result<()> {
    if spec.size < 8 {
        return Err(Error::Config("synth.size must be >= 8".into()));
    }
    let base = out_root.join(SYNTH_CATEGORY);
    let train_dir = base.join("train").join("good");
    let good_dir = base.join("test").join("good");
    let defect_dir = base.join("test").join("defect");
    let gt_dir = base.join("ground_truth").join("defect");
    for d in [&train_dir, &good_dir, &defect_dir, &gt_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    for i in 0..spec.train {
        let item = render_item(spec, ROLE_TRAIN + i as u64, false)?;
        save_rgb(
            &train_dir.join(format!("{i:03}.png")),
            &raw_from_pixels(spec.size, &item.pixels),
        )?;
    }
    for i in 0..spec.test_good {
        let item = render_item(spec, ROLE_TEST_GOOD + i as u64, false)?;
        save_rgb(
            &good_dir.join(format!("{i:03}.png")),
            &raw_from_pixels(spec.size, &item.pixels),
        )?;
    }
    for i in 0..spec.test_defect {
        let item = render_item(spec, ROLE_TEST_DEFECT + i as u64, true)?;
        let n_mask = item.mask.iter().filter(|&&b| b == 1).count();
        let inside = item
            .mask
            .iter()
            .zip(&item.footprint)
            .all(|(&m, &f)| m == 0 || f == 1);
        if n_mask == 0 || !inside {
            return Err(Error::Dataset(format!(
                "generator post-check failed for defect item {i}"
            )));
        }
        save_rgb(
            &defect_dir.join(format!("{i:03}.png")),
            &raw_from_pixels(spec.size, &item.pixels),
        )?;
        save_mask(
            &gt_dir.join(format!("{i:03}_mask.png")),
            spec.size,
            spec.size,
            &item.mask,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn tree_has_the_requested_counts() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            train: 5,
            test_good: 2,
            test_defect: 3,
            size: 32,
            seed: 7,
        };
        make_synthetic_dataset(dir.path(), &spec).unwrap();
        let index = super::super::scan_dataset(dir.path(), SYNTH_CATEGORY).unwrap();
        assert_eq!(index.train.len(), 5);
        assert_eq!(index.test.len(), 5);
        assert_eq!(index.test.iter().filter(|t| t.is_anomalous).count(), 3);
    }

    fn tree_digest(root: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                    out.insert(rel, fs::read(&path).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SynthSpec {
            train: 3,
            test_good: 1,
            test_defect: 2,
            size: 24,
            seed: 99,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        make_synthetic_dataset(a.path(), &spec).unwrap();
        make_synthetic_dataset(b.path(), &spec).unwrap();
        assert_eq!(tree_digest(a.path()), tree_digest(b.path()));

        let c = tempfile::tempdir().unwrap();
        make_synthetic_dataset(c.path(), &SynthSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(tree_digest(a.path()), tree_digest(c.path()));
    }

    #[test]
    fn defect_masks_are_nonempty_and_inside_footprint() {
        let spec = SynthSpec {
            train: 0,
            test_good: 0,
            test_defect: 12,
            size: 48,
            seed: 3,
        };
        for i in 0..spec.test_defect {
            let item = render_item(&spec, ROLE_TEST_DEFECT + i as u64, true).unwrap();
            let count = item.mask.iter().filter(|&&m| m == 1).count();
            assert!(count >= 8, "item {i} has {count} defect pixels");
            assert!(item
                .mask
                .iter()
                .zip(&item.footprint)
                .all(|(&m, &f)| m == 0 || f == 1));
        }
    }

    #[test]
    fn normal_items_have_empty_masks() {
        let spec = SynthSpec::default();
        let item = render_item(&spec, ROLE_TRAIN, false).unwrap();
        assert!(item.mask.iter().all(|&m| m == 0));
        assert!(item.footprint.iter().any(|&f| f == 1));
    }
}
