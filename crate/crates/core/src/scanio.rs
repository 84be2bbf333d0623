//! Scan volumes, manifests and their on-disk formats.
//!
//! Scan file layout (all little-endian):
//!
//! ```text
//! "MSCT" | u32 width | u32 height | u32 depth | depth*height*width x u16 voxels
//! ```
//!
//! Voxels are stored slice-major, then row-major within a slice. Source and
//! diagnosis labels are not part of the scan file; they come from the
//! manifest, a JSON-lines file with one [`ManifestRecord`] per line.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::imaging::GraySlice;

pub const SCAN_MAGIC: &[u8; 4] = b"MSCT";
pub const SCAN_HEADER_LEN: usize = 16;
pub const DEFAULT_NUM_SOURCES: usize = 4;

/// Originating centre of a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SourceId(u8);

impl SourceId {
    pub fn new(value: u8, num_sources: usize) -> Result<Self> {
        if (value as usize) < num_sources {
            Ok(SourceId(value))
        } else {
            Err(Error::Config(format!(
                "source {value} out of range for {num_sources} sources"
            )))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DiagnosisLabel {
    #[default]
    NonCovid,
    Covid,
}

impl DiagnosisLabel {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(DiagnosisLabel::NonCovid),
            1 => Some(DiagnosisLabel::Covid),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            DiagnosisLabel::NonCovid => 0,
            DiagnosisLabel::Covid => 1,
        }
    }

    pub fn is_covid(self) -> bool {
        self == DiagnosisLabel::Covid
    }

    pub fn target(self) -> f64 {
        self.bit() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// A stack of 16-bit grayscale slices with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanVolume {
    pub scan_id: String,
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub voxels: Vec<u16>,
    pub source: SourceId,
    pub label: DiagnosisLabel,
}

impl ScanVolume {
    pub fn new(
        scan_id: impl Into<String>,
        width: usize,
        height: usize,
        depth: usize,
        voxels: Vec<u16>,
        source: SourceId,
        label: DiagnosisLabel,
    ) -> Result<Self> {
        let volume = ScanVolume {
            scan_id: scan_id.into(),
            width,
            height,
            depth,
            voxels,
            source,
            label,
        };
        volume.check()?;
        Ok(volume)
    }

    /// Checks the shape invariants; fields are public so this can be violated.
    pub fn check(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.depth == 0 {
            return Err(Error::InvalidVolume(format!(
                "zero dimension {}x{}x{}",
                self.width, self.height, self.depth
            )));
        }
        let expected = self.width * self.height * self.depth;
        if self.voxels.len() != expected {
            return Err(Error::InvalidVolume(format!(
                "{} voxels for {}x{}x{} (expected {expected})",
                self.voxels.len(),
                self.width,
                self.height,
                self.depth
            )));
        }
        Ok(())
    }

    pub fn slice_len(&self) -> usize {
        self.width * self.height
    }

    pub fn raw_slice(&self, z: usize) -> &[u16] {
        let n = self.slice_len();
        &self.voxels[z * n..(z + 1) * n]
    }

    /// Slice `z` with intensities mapped to [0, 1].
    pub fn slice(&self, z: usize) -> GraySlice {
        let pixels = self
            .raw_slice(z)
            .iter()
            .map(|&v| v as f64 / u16::MAX as f64)
            .collect();
        GraySlice::new(self.width, self.height, pixels)
    }

    pub fn slices(&self) -> Vec<GraySlice> {
        (0..self.depth).map(|z| self.slice(z)).collect()
    }

    pub fn with_labels(mut self, source: SourceId, label: DiagnosisLabel) -> Self {
        self.source = source;
        self.label = label;
        self
    }
}

/// Encodes a volume into the scan file byte layout.
pub fn encode_scan(volume: &ScanVolume) -> Result<Vec<u8>> {
    volume.check()?;
    let mut bytes = Vec::with_capacity(SCAN_HEADER_LEN + 2 * volume.voxels.len());
    bytes.extend_from_slice(SCAN_MAGIC);
    for dim in [volume.width, volume.height, volume.depth] {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::InvalidVolume(format!("dimension {dim} exceeds u32")))?;
        bytes.extend_from_slice(&dim.to_le_bytes());
    }
    for v in &volume.voxels {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(bytes)
}

/// Decodes scan file bytes. `path` is only used for error context.
pub fn decode_scan(bytes: &[u8], path: &Path) -> Result<ScanVolume> {
    if bytes.len() < 4 || &bytes[..4] != SCAN_MAGIC {
        return Err(Error::NotAScanFile {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < SCAN_HEADER_LEN {
        return Err(Error::CorruptScan {
            path: path.to_path_buf(),
            reason: format!("truncated header ({} bytes)", bytes.len()),
        });
    }
    let dim = |i: usize| {
        let off = 4 + 4 * i;
        u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize
    };
    let (width, height, depth) = (dim(0), dim(1), dim(2));
    if width == 0 || height == 0 || depth == 0 {
        return Err(Error::InvalidHeader {
            path: path.to_path_buf(),
            reason: format!("zero dimension {width}x{height}x{depth}"),
        });
    }
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(depth))
        .ok_or_else(|| Error::InvalidHeader {
            path: path.to_path_buf(),
            reason: "dimensions overflow".into(),
        })?;
    let payload = &bytes[SCAN_HEADER_LEN..];
    if payload.len() != 2 * count {
        return Err(Error::CorruptScan {
            path: path.to_path_buf(),
            reason: format!(
                "header {width}x{height}x{depth} needs {} payload bytes, found {}",
                2 * count,
                payload.len()
            ),
        });
    }
    let voxels = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    let scan_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ScanVolume {
        scan_id,
        width,
        height,
        depth,
        voxels,
        source: SourceId::default(),
        label: DiagnosisLabel::default(),
    })
}

pub fn write_scan(volume: &ScanVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_scan(volume)?;
    fs::write(path, bytes).with_path(path)
}

/// Reads a scan file. The returned volume takes its id from the file stem and
/// carries default labels; use [`ScanVolume::with_labels`] or [`load_scan`]
/// to attach the manifest's labels.
pub fn read_scan(path: impl AsRef<Path>) -> Result<ScanVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).with_path(path)?;
    decode_scan(&bytes, path)
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub scan_id: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub source: SourceId,
    pub label: DiagnosisLabel,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    scan_id: String,
    path: String,
    source: u8,
    label: u8,
    split: String,
}

impl ManifestRecord {
    fn to_raw(&self) -> RawRecord {
        RawRecord {
            scan_id: self.scan_id.clone(),
            path: self.path.to_string_lossy().replace('\\', "/"),
            source: self.source.value(),
            label: self.label.bit(),
            split: self.split.as_str().to_string(),
        }
    }
}

/// Parses a manifest without touching the filesystem beyond the manifest itself.
pub fn parse_manifest(text: &str, num_sources: usize) -> Result<Vec<ManifestRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: line_no,
            reason: e.to_string(),
        })?;
        let split = match raw.split.as_str() {
            "train" => Split::Train,
            "val" => Split::Val,
            _ => {
                return Err(Error::UnknownSplit {
                    line: line_no,
                    split: raw.split,
                })
            }
        };
        let source = SourceId::new(raw.source, num_sources).map_err(|e| Error::Manifest {
            line: line_no,
            reason: e.to_string(),
        })?;
        let label = DiagnosisLabel::from_bit(raw.label).ok_or_else(|| Error::Manifest {
            line: line_no,
            reason: format!("label must be 0 or 1, got {}", raw.label),
        })?;
        if !seen.insert(raw.scan_id.clone()) {
            return Err(Error::DuplicateScanId {
                line: line_no,
                scan_id: raw.scan_id,
            });
        }
        records.push(ManifestRecord {
            scan_id: raw.scan_id,
            path: PathBuf::from(raw.path),
            source,
            label,
            split,
        });
    }
    Ok(records)
}

/// Loads a manifest and checks that every referenced scan file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    load_manifest_with(path, DEFAULT_NUM_SOURCES)
}

pub fn load_manifest_with(path: impl AsRef<Path>, num_sources: usize) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).with_path(path)?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.with_path(path)?);
        text.push('\n');
    }
    let records = parse_manifest(&text, num_sources)?;
    let root = manifest_root(path);
    // Line numbers for the existence check: re-derive from non-blank lines.
    let line_numbers: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, _)| i + 1)
        .collect();
    for (record, &line) in records.iter().zip(&line_numbers) {
        let scan_path = root.join(&record.path);
        if !scan_path.is_file() {
            return Err(Error::Manifest {
                line,
                reason: format!("scan file {} does not exist", scan_path.display()),
            });
        }
    }
    Ok(records)
}

pub fn write_manifest(records: &[ManifestRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).with_path(path)?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(&record.to_raw()).expect("manifest record serializes");
        writeln!(out, "{line}").with_path(path)?;
    }
    out.flush().with_path(path)
}

/// Directory that manifest paths are relative to.
pub fn manifest_root(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Reads the scan a record points to and attaches the record's labels.
pub fn load_scan(record: &ManifestRecord, root: &Path) -> Result<ScanVolume> {
    let mut volume = read_scan(root.join(&record.path))?;
    volume.scan_id = record.scan_id.clone();
    Ok(volume.with_labels(record.source, record.label))
}
