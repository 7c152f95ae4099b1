//! Binary model checkpoints: versioned header, JSON config and stats blocks,
//! little-endian f32 parameter blob, trailing SHA-256 content hash. Loss
//! history is exported as CSV alongside.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

use super::model::{Model, ModelConfig};
use super::train::{EpochRecord, ModelBundle, TrainMeta};
use crate::dataset::NormStats;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 16] = b"RISLOC-MODEL-001";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    norm_stats: NormStats,
    train_meta: TrainMeta,
}

/// Serialize a bundle to the checkpoint byte layout.
pub fn bundle_to_bytes(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config_json = serde_json::to_vec(&bundle.model.config)?;
    buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config_json);
    let meta_json = serde_json::to_vec(&CheckpointMeta {
        norm_stats: bundle.norm_stats.clone(),
        train_meta: bundle.meta.clone(),
    })?;
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    let params = bundle.model.export_params();
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut hasher = Sha256::new();
    hasher.update(&buf);
    buf.extend_from_slice(&hasher.finalize());
    Ok(buf)
}

/// Parse checkpoint bytes back into a bundle (history is not persisted).
pub fn bundle_from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < 16 + 4 + 4 {
        return Err(Error::Format("checkpoint truncated in header".into()));
    }
    if &bytes[..16] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    if bytes.len() < 32 {
        return Err(Error::Format("checkpoint truncated".into()));
    }
    let (body, hash) = bytes.split_at(bytes.len() - 32);
    let mut hasher = Sha256::new();
    hasher.update(body);
    if hasher.finalize().as_slice() != hash {
        return Err(Error::Format("checkpoint content hash mismatch".into()));
    }

    let mut off = 20usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > body.len() {
            return Err(Error::Format("checkpoint truncated in body".into()));
        }
        let s = &body[*off..*off + n];
        *off += n;
        Ok(s)
    };
    let config_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let config: ModelConfig = serde_json::from_slice(take(&mut off, config_len)?)?;
    let meta_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let meta: CheckpointMeta = serde_json::from_slice(take(&mut off, meta_len)?)?;
    let n_params = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
    if n_params != config.param_count() {
        return Err(Error::Format(format!(
            "blob declares {} params, config implies {}",
            n_params,
            config.param_count()
        )));
    }
    let blob = take(&mut off, n_params * 4)?;
    if off != body.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    let mut params = Vec::with_capacity(n_params);
    for chunk in blob.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(Error::Format("non-finite parameter in checkpoint".into()));
        }
        params.push(v);
    }
    let mut model = Model::new(config, 0)?;
    model.import_params(&params)?;
    Ok(ModelBundle {
        model,
        norm_stats: meta.norm_stats,
        meta: meta.train_meta,
        history: Vec::new(),
    })
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let bytes = bundle_to_bytes(bundle)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let bytes = std::fs::read(path)?;
    bundle_from_bytes(&bytes)
}

/// CSV export: epoch, train_mse, val_mse, lr.
pub fn write_loss_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_mse,val_mse,lr\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_mse, r.val_mse, r.lr
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
