//! Versioned binary checkpoint container.
//!
//! Layout: magic `PSLW`, u32 format version, u64 header length, a JSON header
//! (encoder id, ablation, resolved config snapshot, best-epoch metadata, and
//! the tensor index with shapes), then the tensors as little-endian f64 in
//! header order. Seeds plus the epoch counters in the header are the full
//! RNG state: every episode stream is re-derivable from them.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

const MAGIC: &[u8; 4] = b"PSLW";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    encoder_id: String,
    ablation: String,
    config: BTreeMap<String, String>,
    embed_dim: usize,
    repeat: usize,
    best_epoch: usize,
    best_val_auc: f64,
    epochs_run: usize,
    tensors: Vec<TensorInfo>,
}

/// A trained model with everything needed to reproduce and evaluate it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub encoder_id: String,
    pub ablation: String,
    /// Resolved flat config snapshot of the producing run.
    pub config: BTreeMap<String, String>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub epochs_run: usize,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: Vec<TensorInfo> = self
            .params
            .tensors()
            .iter()
            .map(|(name, t)| TensorInfo {
                name: name.to_string(),
                rows: t.nrows(),
                cols: t.ncols(),
            })
            .collect();
        let header = Header {
            version: CHECKPOINT_VERSION,
            encoder_id: self.encoder_id.clone(),
            ablation: self.ablation.clone(),
            config: self.config.clone(),
            embed_dim: self.params.dim(),
            repeat: self.params.repeat(),
            best_epoch: self.best_epoch,
            best_val_auc: self.best_val_auc,
            epochs_run: self.epochs_run,
            tensors,
        };
        let header_json = serde_json::to_vec(&header).expect("header serializes");

        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header_json);
        for (_, tensor) in self.params.tensors() {
            for v in tensor.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let tmp = path.with_extension("pslw.tmp");
        fs::File::create(&tmp)?.write_all(&buf)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .map_err(|e| {
                Error::Environment(format!("cannot open checkpoint {}: {e}", path.display()))
            })?
            .read_to_end(&mut bytes)?;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Compatibility("checkpoint truncated".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let mut pos = 0usize;
        if take(&mut pos, 4)? != MAGIC {
            return Err(Error::Compatibility(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint format version {version}, this build supports {CHECKPOINT_VERSION}"
            )));
        }
        let header_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(take(&mut pos, header_len)?)
            .map_err(|e| Error::Compatibility(format!("checkpoint header unreadable: {e}")))?;

        let mut tensors: BTreeMap<String, Array2<f64>> = BTreeMap::new();
        for info in &header.tensors {
            let count = info.rows * info.cols;
            let raw = take(&mut pos, count * 8)?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Array2::from_shape_vec((info.rows, info.cols), values)
                .map_err(|e| Error::Compatibility(format!("tensor '{}': {e}", info.name)))?;
            tensors.insert(info.name.clone(), tensor);
        }
        if pos != bytes.len() {
            return Err(Error::Compatibility(
                "checkpoint has trailing garbage".into(),
            ));
        }
        let params = ModelParams::from_tensors(header.embed_dim, header.repeat, tensors)
            .map_err(|e| Error::Compatibility(format!("checkpoint tensors invalid: {e}")))?;
        Ok(Checkpoint {
            encoder_id: header.encoder_id,
            ablation: header.ablation,
            config: header.config,
            best_epoch: header.best_epoch,
            best_val_auc: header.best_val_auc,
            epochs_run: header.epochs_run,
            params,
        })
    }
}
