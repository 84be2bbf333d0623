//! On-disk bundle cache and dataset loading.
//!
//! Cache files are named by the SHA-256 of the scan file bytes and the
//! preprocessing config, so editing either invalidates the entry:
//!
//! ```text
//! "MSBD" | u32 version | u32 resolution | 8 x u64 slice index | 8 x res^2 f64 pixels
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::imaging::{GraySlice, ImagingConfig};
use crate::kds::{preprocess_volume, LabeledBundle, Preprocessed, SliceBundle, BUNDLE_LEN};
use crate::objective::{estimate_priors, SourcePriors};
use crate::scanio::{decode_scan, load_manifest_with, manifest_root, ManifestRecord, Split};
use crate::seeding::hex_digest;

const BUNDLE_MAGIC: &[u8; 4] = b"MSBD";
const BUNDLE_VERSION: u32 = 1;

/// Hash of the preprocessing parameters that shape a bundle.
pub fn imaging_key(config: &ImagingConfig) -> String {
    let mut h = Sha256::new();
    h.update(BUNDLE_VERSION.to_le_bytes());
    h.update(config.threshold.to_bits().to_le_bytes());
    h.update((config.target as u64).to_le_bytes());
    hex_digest(&h.finalize())[..16].to_string()
}

pub fn encode_bundle(bundle: &SliceBundle) -> Vec<u8> {
    let r = bundle.resolution();
    let mut out = Vec::with_capacity(12 + 8 * BUNDLE_LEN * (1 + r * r));
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(r as u32).to_le_bytes());
    for &i in &bundle.chosen_indices {
        out.extend_from_slice(&(i as u64).to_le_bytes());
    }
    for img in &bundle.images {
        for p in &img.pixels {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out
}

/// `None` when the bytes are not a complete bundle of this version.
pub fn decode_bundle(bytes: &[u8]) -> Option<SliceBundle> {
    if bytes.len() < 12 || &bytes[..4] != BUNDLE_MAGIC {
        return None;
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    if word(4) != BUNDLE_VERSION {
        return None;
    }
    let r = word(8) as usize;
    let body = &bytes[12..];
    if body.len() != 8 * (BUNDLE_LEN + BUNDLE_LEN * r * r) {
        return None;
    }
    let mut vals = body.chunks_exact(8).map(|c| c.try_into().unwrap());
    let chosen_indices = std::array::from_fn(|_| u64::from_le_bytes(vals.next().unwrap()) as usize);
    let images = (0..BUNDLE_LEN)
        .map(|_| {
            let px = vals.by_ref().take(r * r).map(f64::from_le_bytes).collect();
            GraySlice::new(r, r, px)
        })
        .collect();
    Some(SliceBundle {
        images,
        chosen_indices,
    })
}

/// One manifest entry after preprocessing.
#[derive(Debug, Clone)]
pub enum Prepared {
    Bundle(LabeledBundle),
    Rejected { scan_id: String, reason: String },
}

/// Reads, validates, selects and bundles one scan, consulting the cache
/// directory first when given.
pub fn prepare_scan(
    record: &ManifestRecord,
    root: &Path,
    imaging: &ImagingConfig,
    cache_dir: Option<&Path>,
) -> Result<Prepared> {
    let path = root.join(&record.path);
    let bytes = fs::read(&path).with_path(&path)?;
    let cache_file: Option<PathBuf> = cache_dir.map(|dir| {
        dir.join(format!(
            "{}-{}.bundle",
            &hex_digest(&Sha256::digest(&bytes))[..32],
            imaging_key(imaging)
        ))
    });
    let label = |bundle| {
        Prepared::Bundle(LabeledBundle {
            scan_id: record.scan_id.clone(),
            source: record.source,
            label: record.label,
            bundle,
        })
    };
    if let Some(file) = &cache_file {
        if let Some(bundle) = fs::read(file).ok().and_then(|b| decode_bundle(&b)) {
            return Ok(label(bundle));
        }
    }
    let volume = decode_scan(&bytes, &path)?.with_labels(record.source, record.label);
    match preprocess_volume(&volume, imaging) {
        Preprocessed::Rejected(reason) => Ok(Prepared::Rejected {
            scan_id: record.scan_id.clone(),
            reason,
        }),
        Preprocessed::Bundle { bundle, .. } => {
            if let Some(file) = &cache_file {
                write_atomic(file, &encode_bundle(&bundle))?;
            }
            Ok(label(bundle))
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_path(dir)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).with_path(&tmp)?;
    fs::rename(&tmp, path).with_path(path)
}

/// Preprocessed train and validation splits plus the training priors.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<LabeledBundle>,
    pub val: Vec<LabeledBundle>,
    pub rejected: Vec<(String, String)>,
    /// `None` when some source has no training scans.
    pub priors: Option<SourcePriors>,
    pub prior_error: Option<String>,
    pub num_sources: usize,
}

pub fn load_dataset(
    manifest: &Path,
    num_sources: usize,
    imaging: &ImagingConfig,
    cache_dir: Option<&Path>,
) -> Result<Dataset> {
    let records = load_manifest_with(manifest, num_sources)?;
    let root = manifest_root(manifest);
    let prepared: Vec<Result<Prepared>> = records
        .par_iter()
        .map(|r| prepare_scan(r, &root, imaging, cache_dir))
        .collect();
    let mut data = Dataset {
        train: Vec::new(),
        val: Vec::new(),
        rejected: Vec::new(),
        priors: None,
        prior_error: None,
        num_sources,
    };
    for (record, p) in records.iter().zip(prepared) {
        match p? {
            Prepared::Bundle(b) => match record.split {
                Split::Train => data.train.push(b),
                Split::Val => data.val.push(b),
            },
            Prepared::Rejected { scan_id, reason } => {
                log::warn!("skipping {scan_id}: {reason}");
                data.rejected.push((scan_id, reason));
            }
        }
    }
    match estimate_priors(&records, num_sources) {
        Ok(p) => data.priors = Some(p),
        Err(e) => data.prior_error = Some(e.to_string()),
    }
    if data.train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if data.val.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    Ok(data)
}
