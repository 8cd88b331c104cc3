//! Checkpoints: a raw little-endian parameter blob plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Mode, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub dtype: String,
    pub param_count: usize,
    /// SHA-256 of the parameter blob.
    pub params_sha256: String,
    pub vocab_hash: String,
    pub step: u64,
    pub seed: u64,
}

fn manifest_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

fn encode<S: Scalar>(params: &[S]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(params.len() * S::BYTES);
    for &p in params {
        p.write_le(&mut buf);
    }
    buf
}

/// Write `<path>` (blob) and `<path>.json` (manifest, same stem). Returns the manifest.
pub fn save_checkpoint<S: Scalar>(
    model: &Model<S>,
    path: &Path,
    vocab_hash: &str,
    step: u64,
    seed: u64,
) -> Result<CheckpointManifest> {
    let blob = encode(model.params());
    let manifest = CheckpointManifest {
        config: model.config().clone(),
        dtype: S::DTYPE.to_string(),
        param_count: model.param_count(),
        params_sha256: hex::encode(Sha256::digest(&blob)),
        vocab_hash: vocab_hash.to_string(),
        step,
        seed,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &blob).map_err(|e| Error::io(path, e))?;
    let mp = manifest_path(path);
    let body = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&mp, body).map_err(|e| Error::io(&mp, e))?;
    Ok(manifest)
}

pub fn load_checkpoint<S: Scalar>(path: &Path, mode: Mode) -> Result<(Model<S>, CheckpointManifest)> {
    let mp = manifest_path(path);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let fmt_err = |msg: String| Error::Format {
        path: path.into(),
        msg,
    };
    if manifest.dtype != S::DTYPE {
        return Err(fmt_err(format!("checkpoint dtype {} != requested {}", manifest.dtype, S::DTYPE)));
    }
    let blob = fs::read(path).map_err(|e| Error::io(path, e))?;
    if hex::encode(Sha256::digest(&blob)) != manifest.params_sha256 {
        return Err(fmt_err("parameter blob does not match manifest hash".into()));
    }
    if blob.len() != manifest.param_count * S::BYTES {
        return Err(fmt_err("parameter blob has the wrong size".into()));
    }
    let params = blob.chunks_exact(S::BYTES).map(S::read_le).collect();
    let model = Model::from_params(manifest.config.clone(), params, mode)?;
    Ok((model, manifest))
}
