//! Multi-source chest CT COVID-19 detection with a source-aware auxiliary
//! objective, reproduced at desk scale on synthetic phantoms.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod imaging;
pub mod kds;
pub mod metrics;
pub mod nncore;
pub mod objective;
pub mod scanio;
pub mod seeding;
pub mod synthgen;

pub use error::{Error, Result};
