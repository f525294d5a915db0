//! Checkpoints: a JSON sidecar with config, epoch, seed and a tensor index,
//! plus a `.bin` file holding one feature-format blob per parameter in
//! registration order.
//!
//! ```text
//! epoch_003.json  {"format":"talkit-checkpoint","version":1,"epoch":3,"seed":..,
//!                  "config":{..},"tensors":[{"name","offset","length","rows","cols"},..]}
//! epoch_003.bin   TKF1 blob | TKF1 blob | ...
//! ```
//!
//! Both files are written to a temporary name and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use talkit_core::io::{decode_feature_bytes, encode_feature_bytes};

use crate::error::{Error, Result};
use crate::model::{Localizer, ModelConfig};
use crate::params::ParamStore;

pub const CHECKPOINT_FORMAT: &str = "talkit-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub offset: u64,
    pub length: u64,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub epoch: usize,
    pub seed: u64,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Write `<dir>/<stem>.json` and `<dir>/<stem>.bin`; returns the JSON path.
pub fn save_checkpoint(dir: &Path, stem: &str, model: &Localizer, epoch: usize, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut tensors = Vec::with_capacity(model.params().len());
    for (name, value) in model.params().iter() {
        let bytes = encode_feature_bytes(&value.mapv(|x| x as f32))?;
        tensors.push(TensorEntry {
            name: name.to_string(),
            offset: blob.len() as u64,
            length: bytes.len() as u64,
            rows: value.nrows(),
            cols: value.ncols(),
        });
        blob.extend_from_slice(&bytes);
    }
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        epoch,
        seed,
        config: model.config().clone(),
        tensors,
    };
    let bin_path = dir.join(format!("{stem}.bin"));
    let json_path = dir.join(format!("{stem}.json"));
    write_atomic(&bin_path, &blob)?;
    let json = serde_json::to_vec_pretty(&meta).expect("checkpoint meta serializes");
    write_atomic(&json_path, &json)?;
    Ok(json_path)
}

pub fn load_checkpoint(json_path: &Path) -> Result<(Localizer, CheckpointMeta)> {
    let bad = |reason: String| Error::Checkpoint {
        path: json_path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if meta.format != CHECKPOINT_FORMAT || meta.version != 1 {
        return Err(bad(format!("unsupported format {} v{}", meta.format, meta.version)));
    }
    let bin_path = json_path.with_extension("bin");
    let blob = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut params = ParamStore::new();
    for t in &meta.tensors {
        let start = t.offset as usize;
        let end = start + t.length as usize;
        if end > blob.len() {
            return Err(bad(format!("tensor `{}` runs past the end of the blob", t.name)));
        }
        let (m, used) = decode_feature_bytes(&blob[start..end], &bin_path)?;
        if used != t.length as usize || m.dim() != (t.rows, t.cols) {
            return Err(bad(format!("tensor `{}` does not match its index entry", t.name)));
        }
        params.insert(t.name.clone(), m.mapv(f64::from));
    }
    let model = Localizer::from_params(meta.config.clone(), params)?;
    Ok((model, meta))
}

/// Round every parameter to float32, as a checkpoint round trip would.
pub fn round_to_f32(params: &mut ParamStore) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let p: &mut Array2<f64> = params.get_mut(id);
        p.mapv_inplace(|x| x as f32 as f64);
    }
}
