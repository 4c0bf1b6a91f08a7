//! Dataset ingestion and image handling.
//!
//! Directory layout follows the common industrial-inspection convention:
//! `<category>/train/good/*`, `<category>/test/<type>/*` and
//! `<category>/ground_truth/<type>/<stem>_mask.<ext>`, with `good` meaning
//! normal. PNG and binary PPM/PGM are the supported codecs.

mod heatmap;
mod synth;

pub use heatmap::{render_heatmap, HeatmapPanels, RawImage};
pub use synth::{make_synthetic_dataset, SynthSpec, SYNTH_CATEGORY};

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{ops, Shape, Tensor};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "ppm", "pgm"];

#[derive(Clone, Debug)]
pub struct TestEntry {
    pub path: PathBuf,
    /// Category-relative path, e.g. `test/defect/003.png`; the stable
    /// identity per-image noise seeds are derived from.
    pub rel_path: String,
    pub is_anomalous: bool,
    pub mask_path: Option<PathBuf>,
    pub defect_type: String,
}

#[derive(Clone, Debug)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub category: String,
    pub train: Vec<PathBuf>,
    pub test: Vec<TestEntry>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && is_image(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Walks `<root>/<category>` into an index with deterministic lexicographic
/// ordering. Every anomalous test image must have a ground-truth mask.
pub fn scan_dataset(root: &Path, category: &str) -> Result<DatasetIndex> {
    let base = root.join(category);
    let train_dir = base.join("train").join("good");
    let train = sorted_images(&train_dir)?;
    if train.is_empty() {
        return Err(Error::Dataset(format!(
            "no training images under {}",
            train_dir.display()
        )));
    }

    let test_dir = base.join("test");
    let mut test = Vec::new();
    for type_dir in sorted_subdirs(&test_dir)? {
        let defect_type = type_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let is_anomalous = defect_type != "good";
        for path in sorted_images(&type_dir)? {
            let file_name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let mask_path = if is_anomalous {
                Some(find_mask(&base, &defect_type, &path)?)
            } else {
                None
            };
            test.push(TestEntry {
                rel_path: format!("test/{defect_type}/{file_name}"),
                path,
                is_anomalous,
                mask_path,
                defect_type: defect_type.clone(),
            });
        }
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        category: category.to_string(),
        train,
        test,
    })
}

fn find_mask(base: &Path, defect_type: &str, image: &Path) -> Result<PathBuf> {
    let stem = image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    let mask_dir = base.join("ground_truth").join(defect_type);
    for ext in IMAGE_EXTENSIONS {
        let candidate = mask_dir.join(format!("{stem}_mask.{ext}"));
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(Error::Dataset(format!(
        "anomalous image {} has no ground-truth mask under {}",
        image.display(),
        mask_dir.display()
    )))
}

fn decode_rgb8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    use image::DynamicImage::*;
    let rgb = match img {
        ImageLuma8(_) | ImageLumaA8(_) | ImageRgb8(_) | ImageRgba8(_) => img.to_rgb8(),
        other => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                detail: format!("unsupported bit depth or color type {:?}", other.color()),
            })
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok((w, h, rgb.into_raw()))
}

/// Decodes to an RGB tensor in [0, 1] (grayscale replicated across the
/// three channels) and bilinearly resizes to a square `target_size`.
pub fn load_image(path: &Path, target_size: usize) -> Result<Tensor<f32>> {
    let (w, h, interleaved) = decode_rgb8(path)?;
    // interleaved RGB rows -> planar (1,3,h,w)
    let mut data = vec![0f32; 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            data[c * h * w + i] = interleaved[i * 3 + c] as f32 / 255.0;
        }
    }
    let t = Tensor::from_vec(Shape::new(1, 3, h, w), data)?;
    if h == target_size && w == target_size {
        return Ok(t);
    }
    ops::bilinear_resize(&t, target_size, target_size)
}

/// Loads a ground-truth mask: any nonzero byte is anomalous. Binarization
/// happens before the nearest-neighbor resize so the output stays {0, 1}.
pub fn load_mask(path: &Path, target_size: usize) -> Result<Vec<u8>> {
    let (w, h, interleaved) = decode_rgb8(path)?;
    let bits: Vec<u8> = (0..h * w)
        .map(|i| {
            let px = &interleaved[i * 3..i * 3 + 3];
            u8::from(px.iter().any(|&v| v != 0))
        })
        .collect();
    if h == target_size && w == target_size {
        return Ok(bits);
    }
    let mut out = vec![0u8; target_size * target_size];
    for oi in 0..target_size {
        let si = nearest_index(oi, target_size, h);
        for oj in 0..target_size {
            let sj = nearest_index(oj, target_size, w);
            out[oi * target_size + oj] = bits[si * w + sj];
        }
    }
    Ok(out)
}

fn nearest_index(o: usize, out_len: usize, in_len: usize) -> usize {
    let s = (o as f64 + 0.5) * in_len as f64 / out_len as f64;
    (s.floor() as usize).min(in_len - 1)
}

/// Writes an RGB byte image atomically (temp file + rename), format chosen
/// by the extension (.png or .ppm).
pub fn save_rgb(path: &Path, img: &RawImage) -> Result<()> {
    let buffer: image::RgbImage =
        image::ImageBuffer::from_raw(img.width as u32, img.height as u32, img.data.clone())
            .ok_or_else(|| Error::Image {
                path: path.to_path_buf(),
                detail: "buffer does not match dimensions".into(),
            })?;
    let tmp = path.with_extension("tmp.png");
    buffer
        .save_with_format(&tmp, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: tmp.clone(),
            detail: e.to_string(),
        })?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes a single-channel mask image atomically as 8-bit PNG {0, 255}.
pub fn save_mask(path: &Path, width: usize, height: usize, bits: &[u8]) -> Result<()> {
    let data: Vec<u8> = bits.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect();
    let buffer: image::GrayImage =
        image::ImageBuffer::from_raw(width as u32, height as u32, data).ok_or_else(|| {
            Error::Image {
                path: path.to_path_buf(),
                detail: "buffer does not match dimensions".into(),
            }
        })?;
    let tmp = path.with_extension("tmp.png");
    buffer
        .save_with_format(&tmp, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: tmp.clone(),
            detail: e.to_string(),
        })?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Converts a raw [0,1] RGB tensor (1,3,h,w) to interleaved bytes, clamping
/// at export time only.
pub fn tensor_to_raw_image(t: &Tensor<f32>) -> RawImage {
    let s = t.shape();
    let hw = s.h * s.w;
    let data = (0..hw)
        .flat_map(|i| {
            (0..3).map(move |c| {
                let v = t.data()[c * hw + i];
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            })
        })
        .collect();
    RawImage {
        width: s.w,
        height: s.h,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_ppm(path: &Path, w: usize, h: usize, rgb: &[u8]) {
        let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
        bytes.extend_from_slice(rgb);
        fs::write(path, bytes).unwrap();
    }

    fn write_pgm(path: &Path, w: usize, h: usize, gray: &[u8]) {
        let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
        bytes.extend_from_slice(gray);
        fs::write(path, bytes).unwrap();
    }

    #[test]
    fn ppm_bytes_map_to_unit_floats() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.ppm");
        let rgb = [0u8, 128, 255, 10, 20, 30, 40, 50, 60, 70, 80, 90];
        write_ppm(&p, 2, 2, &rgb);
        let t = load_image(&p, 2).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 2, 2));
        assert!((t.at(0, 0, 0, 0) - 0.0).abs() < 1e-7);
        assert!((t.at(0, 1, 0, 0) - 128.0 / 255.0).abs() < 1e-7);
        assert!((t.at(0, 2, 0, 0) - 1.0).abs() < 1e-7);
        assert!((t.at(0, 0, 1, 1) - 70.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn grayscale_replicates_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.pgm");
        write_pgm(&p, 2, 2, &[0, 60, 120, 240]);
        let t = load_image(&p, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let r = t.at(0, 0, i, j);
                assert_eq!(r, t.at(0, 1, i, j));
                assert_eq!(r, t.at(0, 2, i, j));
            }
        }
    }

    #[test]
    fn square_image_at_target_size_loads_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.ppm");
        let rgb: Vec<u8> = (0..4 * 4 * 3).map(|i| (i * 5 % 251) as u8).collect();
        write_ppm(&p, 4, 4, &rgb);
        let direct = load_image(&p, 4).unwrap();
        for (i, &b) in rgb.iter().enumerate() {
            let px = i / 3;
            let c = i % 3;
            let got = direct.at(0, c, px / 4, px % 4);
            assert!((got - b as f32 / 255.0).abs() < 1e-6);
        }
    }

    #[test]
    fn masks_binarize_before_resizing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mask.pgm");
        write_pgm(&p, 4, 4, &[0, 0, 0, 0, 0, 7, 255, 0, 0, 130, 9, 0, 0, 0, 0, 0]);
        let bits = load_mask(&p, 4).unwrap();
        assert!(bits.iter().all(|&b| b == 0 || b == 1));
        assert_eq!(bits.iter().filter(|&&b| b == 1).count(), 4);
        // resized output stays binary
        let up = load_mask(&p, 8).unwrap();
        assert!(up.iter().all(|&b| b == 0 || b == 1));
        assert!(up.iter().any(|&b| b == 1));
    }

    fn build_layout(root: &Path) {
        let cat = root.join("widget");
        for (dir, count) in [
            ("train/good", 8usize),
            ("test/good", 2),
            ("test/scratch", 3),
        ] {
            let d = cat.join(dir);
            fs::create_dir_all(&d).unwrap();
            for i in 0..count {
                write_ppm(&d.join(format!("{i:03}.ppm")), 2, 2, &[100; 12]);
            }
        }
        let gt = cat.join("ground_truth/scratch");
        fs::create_dir_all(&gt).unwrap();
        for i in 0..3 {
            write_pgm(&gt.join(format!("{i:03}_mask.pgm")), 2, 2, &[0, 255, 0, 0]);
        }
    }

    #[test]
    fn scan_counts_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        build_layout(dir.path());
        let index = scan_dataset(dir.path(), "widget").unwrap();
        assert_eq!(index.train.len(), 8);
        assert_eq!(index.test.len(), 5);
        assert_eq!(index.test.iter().filter(|t| t.is_anomalous).count(), 3);
        assert!(index
            .test
            .iter()
            .filter(|t| t.is_anomalous)
            .all(|t| t.mask_path.is_some()));
    }

    #[test]
    fn scan_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        build_layout(dir.path());
        let a = scan_dataset(dir.path(), "widget").unwrap();
        let b = scan_dataset(dir.path(), "widget").unwrap();
        assert_eq!(a.train, b.train);
        let ra: Vec<&str> = a.test.iter().map(|t| t.rel_path.as_str()).collect();
        let rb: Vec<&str> = b.test.iter().map(|t| t.rel_path.as_str()).collect();
        assert_eq!(ra, rb);
    }

    #[test]
    fn missing_mask_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        build_layout(dir.path());
        fs::remove_file(
            dir.path()
                .join("widget/ground_truth/scratch/001_mask.pgm"),
        )
        .unwrap();
        match scan_dataset(dir.path(), "widget") {
            Err(Error::Dataset(msg)) => assert!(msg.contains("001"), "{msg}"),
            other => panic!("expected dataset error, got {other:?}"),
        }
    }

    #[test]
    fn empty_train_split_errors() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("widget/train/good");
        fs::create_dir_all(&d).unwrap();
        assert!(matches!(
            scan_dataset(dir.path(), "widget"),
            Err(Error::Dataset(_))
        ));
    }
}
