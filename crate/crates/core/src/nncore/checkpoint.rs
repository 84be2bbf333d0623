//! Checkpoint layout, all integers little-endian:
//!
//! ```text
//! "MSCK" | u32 version | u32 resolution | u32 feature_dim | u32 num_sources
//! | u32 n_blocks | n_blocks x u32 width | u64 n_params | n_params x f64
//! ```
//!
//! Parameters follow [`Layout`](super::Layout) order. Dropout is not stored;
//! loading uses the default rate.

use std::path::Path;

use super::params::{ModelConfig, ModelParams};
use super::Real;
use crate::error::{Error, IoContext, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSCK";
const VERSION: u32 = 1;

pub fn encode_checkpoint<T: Real>(params: &ModelParams<T>) -> Vec<u8> {
    let c = &params.config;
    let mut out = Vec::with_capacity(32 + 8 * params.values.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [VERSION, c.resolution as u32, c.feature_dim as u32, c.num_sources as u32, c.widths.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &w in &c.widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.values.len() as u64).to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(Error::Checkpoint {
                path: self.path.to_path_buf(),
                reason: "truncated".into(),
            });
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8], path: &Path) -> Result<ModelParams<T>> {
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader { bytes, path };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let resolution = r.u32()?;
    let feature_dim = r.u32()?;
    let num_sources = r.u32()?;
    let n_blocks = r.u32()?;
    if n_blocks > 16 {
        return Err(bad(format!("{n_blocks} blocks")));
    }
    let widths = (0..n_blocks).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let config = ModelConfig {
        resolution,
        widths,
        feature_dim,
        num_sources,
        ..ModelConfig::default()
    };
    config.check().map_err(|e| bad(e.to_string()))?;
    let n = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    if r.bytes.len() != n.saturating_mul(8) {
        return Err(bad(format!("{n} parameters declared, {} bytes of data", r.bytes.len())));
    }
    let values: Vec<T> = r
        .bytes
        .chunks_exact(8)
        .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let params = ModelParams::from_values(config, values).map_err(|e| bad(e.to_string()))?;
    if !params.is_finite() {
        return Err(bad("non-finite parameter".into()));
    }
    Ok(params)
}

pub fn save_checkpoint<T: Real>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_path(dir)?;
    }
    std::fs::write(path, encode_checkpoint(params)).with_path(path)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ModelParams<T>> {
    let bytes = std::fs::read(path).with_path(path)?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let p = ModelParams::<f64>::init(ModelConfig::default(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&p, &path).unwrap();
        let q: ModelParams<f64> = load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(&std::fs::read(&path).unwrap()[..4], b"MSCK");
    }

    #[test]
    fn rejects_damage() {
        let p = ModelParams::<f64>::init(ModelConfig::default(), 9).unwrap();
        let bytes = encode_checkpoint(&p);
        let path = Path::new("x");
        assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 3], path).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_checkpoint::<f64>(&wrong, path).is_err());
        let mut nan = bytes.clone();
        let at = nan.len() - 8;
        nan[at..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_checkpoint::<f64>(&nan, path).is_err());
    }
}
