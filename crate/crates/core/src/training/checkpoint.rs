//! Self-contained checkpoint file.
//!
//! Layout: magic bytes `N2NCKPT1`, a little-endian u32 header length, a
//! UTF-8 JSON header (configs plus a parameter table of name/shape/byte
//! offset), then the raw little-endian f32 arrays in header order. Inference
//! needs nothing outside the file.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{init_model, ModelConfig, ParameterSet};
use crate::msssim::{LossConfig, SsimParams};
use crate::noise::NoiseConfig;
use crate::tensor::{Shape, Tensor};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"N2NCKPT1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epochs_run: usize,
    pub best_val_loss: f64,
    /// Fingerprint of the ModelConfig this file was trained under; `eval`
    /// compares it against the runtime config before trusting the weights.
    pub model_fingerprint: String,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub ssim: SsimParams,
    pub loss: LossConfig,
    pub noise: NoiseConfig,
    pub params: ParameterSet<f32>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    ssim: SsimParams,
    loss: LossConfig,
    noise: NoiseConfig,
    params: Vec<ParamEntry>,
    meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: [usize; 4],
    /// Byte offset into the data section.
    offset: u64,
}

/// Serializes and writes atomically (temp file + rename).
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut entries = Vec::with_capacity(ckpt.params.len());
    let mut offset = 0u64;
    for (name, t) in ckpt.params.entries() {
        let s = t.shape();
        entries.push(ParamEntry {
            name: name.clone(),
            shape: [s.n, s.c, s.h, s.w],
            offset,
        });
        offset += (t.numel() * 4) as u64;
    }
    let header = Header {
        version: ckpt.version,
        model: ckpt.model.clone(),
        ssim: ckpt.ssim.clone(),
        loss: ckpt.loss.clone(),
        noise: ckpt.noise.clone(),
        params: entries,
        meta: ckpt.meta.clone(),
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut buf =
        Vec::with_capacity(MAGIC.len() + 4 + header_bytes.len() + offset as usize);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    for (_, t) in ckpt.params.entries() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    let tmp = path.with_extension("ckpt.tmp");
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads and fully validates a checkpoint: magic, version, header shape
/// table against the ModelConfig's own parameter template, data length, and
/// finiteness of every buffer.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let header_len =
        u32::from_le_bytes(bytes[8..12].try_into().expect("sliced 4 bytes")) as usize;
    let header_end = 12 + header_len;
    if bytes.len() < header_end {
        return Err(Error::Checkpoint(format!(
            "{} is truncated inside the header",
            path.display()
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[12..header_end])?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    header.model.validate()?;

    // The ModelConfig fully determines the expected parameter table.
    let template: ParameterSet<f32> = init_model(&header.model, 0)?;
    if template.len() != header.params.len() {
        return Err(Error::Checkpoint(format!(
            "parameter table has {} entries, model config requires {}",
            header.params.len(),
            template.len()
        )));
    }

    let data = &bytes[header_end..];
    let mut params = ParameterSet::new();
    for ((name, t), entry) in template.entries().iter().zip(&header.params) {
        if *name != entry.name {
            return Err(Error::Shape {
                op: "load_checkpoint",
                detail: format!("expected parameter {name}, found {}", entry.name),
            });
        }
        let want = t.shape();
        let got = Shape::new(entry.shape[0], entry.shape[1], entry.shape[2], entry.shape[3]);
        if want != got {
            return Err(Error::Shape {
                op: "load_checkpoint",
                detail: format!("parameter {name} has shape {got}, model config requires {want}"),
            });
        }
        let start = entry.offset as usize;
        let end = start + want.numel() * 4;
        if end > data.len() {
            return Err(Error::Checkpoint(format!(
                "{} is truncated inside parameter {name}",
                path.display()
            )));
        }
        let values: Vec<f32> = data[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("chunked 4 bytes")))
            .collect();
        params.insert(
            name.clone(),
            Tensor::from_vec(got, values)?.requires_grad(),
        )?;
    }

    Ok(Checkpoint {
        version: header.version,
        model: header.model,
        ssim: header.ssim,
        loss: header.loss,
        noise: header.noise,
        params,
        meta: header.meta,
    })
}
