use std::io;
use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: not a scan file", path.display())]
    NotAScanFile { path: PathBuf },

    #[error("{}: corrupt scan: {reason}", path.display())]
    CorruptScan { path: PathBuf, reason: String },

    #[error("{}: invalid header: {reason}", path.display())]
    InvalidHeader { path: PathBuf, reason: String },

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("manifest line {line}: duplicate scan_id {scan_id:?}")]
    DuplicateScanId { line: usize, scan_id: String },

    #[error("manifest line {line}: unknown split {split:?}")]
    UnknownSplit { line: usize, split: String },

    #[error("insufficient slices: need at least 2 areas, got {0}")]
    InsufficientSlices(usize),

    #[error("source {0} has no training scans, its log prior is undefined")]
    MissingSourcePrior(u8),

    #[error("{0} split is empty")]
    EmptySplit(&'static str),

    #[error("undefined AUC: {0}")]
    UndefinedAuc(&'static str),

    #[error("non-finite loss for scan {scan_id}")]
    NonFiniteLoss { scan_id: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: bad checkpoint: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn with_path(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn with_path(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
