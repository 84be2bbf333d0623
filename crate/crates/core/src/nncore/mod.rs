//! A small dual-head convolutional model with hand-written backpropagation.
//!
//! Each of a scan's eight slices passes through the same convolutional
//! extractor; the per-slice features are mean-pooled into one scan vector
//! that feeds two dropout + affine heads: one COVID logit and one logit per
//! source.

mod adam;
mod augment;
mod checkpoint;
mod conv;
mod model;
mod params;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

pub use adam::{adam_step, AdamHyper, AdamState};
pub use augment::{augment, brightness_contrast, flip_horizontal, AugmentConfig};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use model::{
    backward, forward_scan, forward_scan_cached, loss_and_grad, mean_pool, predict_probability, BatchItem,
    Mode, ScanCache, ScanOutput, INPUT_MEAN, INPUT_STD,
};
pub use params::{Gradients, GroupKind, Layout, ModelConfig, ModelParams, ParamGroup};

/// Floating point type the model computes in.
pub trait Real:
    num_traits::Float + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim() {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            other => Err(crate::Error::Config(format!("unknown precision {other:?}"))),
        }
    }
}
