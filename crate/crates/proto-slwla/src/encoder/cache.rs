//! Embedding cache: in-memory always, optionally persisted to disk.
//!
//! Disk entries are keyed by (encoder id, text hash) and stored one file per
//! text as a small binary container: magic `PSEM`, format version, then a
//! shape header {d, L, valid_len} followed by the d*L matrix as little-endian
//! f64, column-major by token position.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;

use super::{fnv1a64, EmbeddingMatrix, Encoder};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PSEM";
const VERSION: u32 = 1;

pub struct EmbeddingCache {
    disk_dir: Option<PathBuf>,
    mem: HashMap<String, Arc<EmbeddingMatrix>>,
}

impl EmbeddingCache {
    /// Memory-only cache.
    pub fn new() -> Self {
        EmbeddingCache {
            disk_dir: None,
            mem: HashMap::new(),
        }
    }

    /// Cache that also persists under `dir/<encoder-id-hash>/`.
    pub fn with_disk(dir: &Path, encoder_id: &str) -> Result<Self> {
        let sub = dir.join(format!("{:016x}", fnv1a64(&[encoder_id.as_bytes()])));
        fs::create_dir_all(&sub)?;
        Ok(EmbeddingCache {
            disk_dir: Some(sub),
            mem: HashMap::new(),
        })
    }

    /// Embeds `text`, serving repeats from cache. Disk entries with a stale
    /// shape header are recomputed and overwritten.
    pub fn embed(&mut self, encoder: &dyn Encoder, text: &str) -> Result<Arc<EmbeddingMatrix>> {
        if let Some(hit) = self.mem.get(text) {
            return Ok(Arc::clone(hit));
        }
        if let Some(dir) = &self.disk_dir {
            let path = entry_path(dir, text);
            if let Ok(matrix) = read_entry(&path) {
                if matrix.dim() == encoder.dim() && matrix.max_len() == encoder.max_len() {
                    let arc = Arc::new(matrix);
                    self.mem.insert(text.to_string(), Arc::clone(&arc));
                    return Ok(arc);
                }
            }
        }
        let matrix = encoder.embed_tokens(text)?;
        if let Some(dir) = &self.disk_dir {
            write_entry(&entry_path(dir, text), &matrix)?;
        }
        let arc = Arc::new(matrix);
        self.mem.insert(text.to_string(), Arc::clone(&arc));
        Ok(arc)
    }

    pub fn len(&self) -> usize {
        self.mem.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mem.is_empty()
    }
}

impl Default for EmbeddingCache {
    fn default() -> Self {
        Self::new()
    }
}

fn entry_path(dir: &Path, text: &str) -> PathBuf {
    dir.join(format!("{:016x}.emb", fnv1a64(&[text.as_bytes()])))
}

fn write_entry(path: &Path, matrix: &EmbeddingMatrix) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(matrix.dim() as u64).to_le_bytes());
    buf.extend_from_slice(&(matrix.max_len() as u64).to_le_bytes());
    buf.extend_from_slice(&(matrix.valid_len() as u64).to_le_bytes());
    for j in 0..matrix.max_len() {
        for i in 0..matrix.dim() {
            buf.extend_from_slice(&matrix.values()[(i, j)].to_le_bytes());
        }
    }
    let tmp = path.with_extension("emb.tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_entry(path: &Path) -> Result<EmbeddingMatrix> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::validation("embedding cache entry truncated"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::validation("embedding cache entry: bad magic"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::validation(format!(
            "embedding cache entry version {version}, expected {VERSION}"
        )));
    }
    let d = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let l = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let valid_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let mut values = Array2::zeros((d, l));
    for j in 0..l {
        for i in 0..d {
            values[(i, j)] = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        }
    }
    EmbeddingMatrix::new(values, valid_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::MockEncoder;

    #[test]
    fn memory_cache_returns_shared_matrix() {
        let enc = MockEncoder::new(3, 8, 6);
        let mut cache = EmbeddingCache::new();
        let a = cache.embed(&enc, "the food was great").unwrap();
        let b = cache.embed(&enc, "the food was great").unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn disk_round_trip_preserves_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let enc = MockEncoder::new(3, 8, 6);
        let first = {
            let mut cache = EmbeddingCache::with_disk(dir.path(), &enc.id()).unwrap();
            cache.embed(&enc, "service was slow").unwrap()
        };
        // Fresh cache instance must hit the disk entry.
        let mut cache = EmbeddingCache::with_disk(dir.path(), &enc.id()).unwrap();
        let second = cache.embed(&enc, "service was slow").unwrap();
        assert_eq!(first.as_ref(), second.as_ref());
    }

    #[test]
    fn stale_dims_are_recomputed() {
        let dir = tempfile::tempdir().unwrap();
        let small = MockEncoder::new(3, 4, 6);
        {
            let mut cache = EmbeddingCache::with_disk(dir.path(), &small.id()).unwrap();
            cache.embed(&small, "some text").unwrap();
        }
        let big = MockEncoder::new(3, 8, 6);
        let mut cache = EmbeddingCache::with_disk(dir.path(), &big.id()).unwrap();
        let m = cache.embed(&big, "some text").unwrap();
        assert_eq!(m.dim(), 8);
    }
}
