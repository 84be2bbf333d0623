//! C ABI over `msct-core`.
//!
//! Every fallible function returns an [`MsctStatus`]; on anything other than
//! `MSCT_STATUS_OK` a description is available from [`msct_last_error`] on
//! the same thread until the next failing call. Scans and models are opaque
//! handles released with their `_free` function. Panics never cross the
//! boundary; they surface as `MSCT_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use msct_core::imaging::{GraySlice, ImagingConfig};
use msct_core::kds::{kds_select, preprocess_volume, AreaProfile, Preprocessed, BUNDLE_LEN};
use msct_core::metrics::{auc_from_scores, final_score, SourceF1};
use msct_core::nncore::{load_checkpoint, predict_probability, ModelParams};
use msct_core::objective::{bce, logit_adjusted_ce, SourcePriors};
use msct_core::scanio::{read_scan, DiagnosisLabel, ScanVolume, SourceId};
use msct_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsctStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Rejected = 5,
    Numeric = 6,
    Internal = 7,
}

/// Number of slices in a bundle.
pub const MSCT_BUNDLE_LEN: usize = 8;
const _: () = assert!(MSCT_BUNDLE_LEN == BUNDLE_LEN);

/// A decoded scan volume.
pub struct MsctScan(ScanVolume);

/// A trained model loaded from a checkpoint.
pub struct MsctModel(ModelParams<f64>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).unwrap()));
}

fn status_of(e: &Error) -> MsctStatus {
    match e {
        Error::Io { .. } => MsctStatus::Io,
        Error::NotAScanFile { .. }
        | Error::CorruptScan { .. }
        | Error::InvalidHeader { .. }
        | Error::InvalidVolume(_)
        | Error::Manifest { .. }
        | Error::DuplicateScanId { .. }
        | Error::UnknownSplit { .. }
        | Error::Checkpoint { .. }
        | Error::Csv(_) => MsctStatus::Format,
        Error::NonFiniteLoss { .. } | Error::UndefinedAuc(_) => MsctStatus::Numeric,
        _ => MsctStatus::InvalidArgument,
    }
}

struct Fail(MsctStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail(status: MsctStatus, msg: &str) -> Fail {
    Fail(status, msg.to_string())
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MsctStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsctStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            MsctStatus::Internal
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(MsctStatus::NullPointer, &format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| fail(MsctStatus::NullPointer, &format!("{what} is null")))
}

unsafe fn path_in(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(fail(MsctStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MsctStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failure on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn msct_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn msct_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads an `MSCT` scan file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msct_scan_read(path: *const c_char, out: *mut *mut MsctScan) -> MsctStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let volume = read_scan(path_in(path)?)?;
        *out = Box::into_raw(Box::new(MsctScan(volume)));
        Ok(())
    })
}

/// Releases a scan. Null is ignored.
///
/// # Safety
/// `scan` must come from [`msct_scan_read`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn msct_scan_free(scan: *mut MsctScan) {
    if !scan.is_null() {
        drop(Box::from_raw(scan));
    }
}

/// Width, height and slice count of a scan.
///
/// # Safety
/// `scan` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn msct_scan_dims(
    scan: *const MsctScan,
    width: *mut usize,
    height: *mut usize,
    depth: *mut usize,
) -> MsctStatus {
    guard(|| {
        let v = &scan.as_ref().ok_or_else(|| fail(MsctStatus::NullPointer, "scan is null"))?.0;
        *out_ref(width, "width")? = v.width;
        *out_ref(height, "height")? = v.height;
        *out_ref(depth, "depth")? = v.depth;
        Ok(())
    })
}

/// Validates a scan and selects its eight slices.
///
/// Writes the chosen slice indices to `indices` (8 entries). When `pixels` is
/// non-null it receives the processed slices, `8 * resolution^2` values in
/// slice then row-major order. A scan that fails validation returns
/// `MSCT_STATUS_REJECTED`.
///
/// # Safety
/// `scan` must be a live handle; `indices` must hold 8 values and `pixels`,
/// if given, `8 * resolution * resolution`.
#[no_mangle]
pub unsafe extern "C" fn msct_scan_preprocess(
    scan: *const MsctScan,
    threshold: f64,
    resolution: usize,
    indices: *mut usize,
    pixels: *mut f64,
) -> MsctStatus {
    guard(|| {
        let v = &scan.as_ref().ok_or_else(|| fail(MsctStatus::NullPointer, "scan is null"))?.0;
        if indices.is_null() {
            return Err(fail(MsctStatus::NullPointer, "indices is null"));
        }
        if resolution == 0 || !(0.0..=1.0).contains(&threshold) {
            return Err(fail(MsctStatus::InvalidArgument, "need resolution > 0 and threshold in [0, 1]"));
        }
        let config = ImagingConfig {
            threshold,
            target: resolution,
        };
        match preprocess_volume(v, &config) {
            Preprocessed::Rejected(reason) => Err(Fail(MsctStatus::Rejected, reason)),
            Preprocessed::Bundle { bundle, .. } => {
                slice::from_raw_parts_mut(indices, BUNDLE_LEN).copy_from_slice(&bundle.chosen_indices);
                if !pixels.is_null() {
                    let out = slice::from_raw_parts_mut(pixels, BUNDLE_LEN * resolution * resolution);
                    for (dst, img) in out.chunks_exact_mut(resolution * resolution).zip(&bundle.images) {
                        dst.copy_from_slice(&img.pixels);
                    }
                }
                Ok(())
            }
        }
    })
}

/// Loads a checkpoint written by `msct train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msct_model_load(path: *const c_char, out: *mut *mut MsctModel) -> MsctStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let params = load_checkpoint::<f64>(&path_in(path)?)?;
        *out = Box::into_raw(Box::new(MsctModel(params)));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`msct_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn msct_model_free(model: *mut MsctModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input side length the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msct_model_resolution(model: *const MsctModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config.resolution)
}

/// COVID probability for one bundle of `8 * resolution^2` pixels in [0, 1].
///
/// # Safety
/// `model` must be a live handle, `pixels` must hold `len` values and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn msct_model_predict(
    model: *const MsctModel,
    pixels: *const f64,
    len: usize,
    out: *mut f64,
) -> MsctStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| fail(MsctStatus::NullPointer, "model is null"))?.0;
        let out = out_ref(out, "out")?;
        let r = m.config.resolution;
        if len != BUNDLE_LEN * r * r {
            return Err(fail(
                MsctStatus::InvalidArgument,
                &format!("expected {} pixels, got {len}", BUNDLE_LEN * r * r),
            ));
        }
        let px = slice_in(pixels, len, "pixels")?;
        if px.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(fail(MsctStatus::InvalidArgument, "pixels must lie in [0, 1]"));
        }
        let images: Vec<GraySlice> = px.chunks_exact(r * r).map(|c| GraySlice::new(r, r, c.to_vec())).collect();
        *out = predict_probability(m, &images)?;
        Ok(())
    })
}

/// Kernel-density slice selection over `n` lung areas of consecutive slices.
///
/// # Safety
/// `areas` must hold `n` values and `out` 8.
#[no_mangle]
pub unsafe extern "C" fn msct_kds_select(areas: *const usize, n: usize, out: *mut usize) -> MsctStatus {
    guard(|| {
        let areas = slice_in(areas, n, "areas")?;
        if out.is_null() {
            return Err(fail(MsctStatus::NullPointer, "out is null"));
        }
        if n == 0 {
            return Err(fail(MsctStatus::InvalidArgument, "need at least one area"));
        }
        let chosen = kds_select(&AreaProfile::contiguous(areas.to_vec()));
        slice::from_raw_parts_mut(out, BUNDLE_LEN).copy_from_slice(&chosen);
        Ok(())
    })
}

/// AUC-ROC of `n` scores against 0/1 labels (1 = COVID).
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msct_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> MsctStatus {
    guard(|| {
        let scores = slice_in(scores, n, "scores")?;
        let labels = slice_in(labels, n, "labels")?;
        let out = out_ref(out, "out")?;
        if labels.iter().any(|&l| l > 1) {
            return Err(fail(MsctStatus::InvalidArgument, "labels must be 0 or 1"));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(fail(MsctStatus::InvalidArgument, "scores must not be NaN"));
        }
        let scored: Vec<(f64, bool)> = scores.iter().zip(labels).map(|(&s, &l)| (s, l == 1)).collect();
        *out = auc_from_scores(&scored)?;
        Ok(())
    })
}

/// Mean over `n` sources of the average of COVID and non-COVID F1.
///
/// # Safety
/// `f1_covid` and `f1_noncovid` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msct_final_score(
    f1_covid: *const f64,
    f1_noncovid: *const f64,
    n: usize,
    out: *mut f64,
) -> MsctStatus {
    guard(|| {
        let c = slice_in(f1_covid, n, "f1_covid")?;
        let nc = slice_in(f1_noncovid, n, "f1_noncovid")?;
        let out = out_ref(out, "out")?;
        if c.iter().chain(nc).any(|f| !(0.0..=1.0).contains(f)) {
            return Err(fail(MsctStatus::InvalidArgument, "F1 values must lie in [0, 1]"));
        }
        let per: Vec<SourceF1> = c
            .iter()
            .zip(nc)
            .map(|(&f1_covid, &f1_noncovid)| SourceF1 { f1_covid, f1_noncovid })
            .collect();
        *out = final_score(&per);
        Ok(())
    })
}

/// Binary cross-entropy of a logit against a 0/1 label.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msct_bce(logit: f64, label: u8, out: *mut f64) -> MsctStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let y = DiagnosisLabel::from_bit(label)
            .ok_or_else(|| fail(MsctStatus::InvalidArgument, "label must be 0 or 1"))?;
        if !logit.is_finite() {
            return Err(fail(MsctStatus::InvalidArgument, "logit must be finite"));
        }
        *out = bce(logit, y);
        Ok(())
    })
}

/// Logit-adjusted cross-entropy of `n` source logits with priors `priors`
/// (positive, summing to 1) for true source `target`.
///
/// # Safety
/// `logits` and `priors` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msct_logit_adjusted_ce(
    logits: *const f64,
    priors: *const f64,
    n: usize,
    target: usize,
    out: *mut f64,
) -> MsctStatus {
    guard(|| {
        let logits = slice_in(logits, n, "logits")?;
        let priors = slice_in(priors, n, "priors")?;
        let out = out_ref(out, "out")?;
        if n == 0 || n > u8::MAX as usize || target >= n {
            return Err(fail(MsctStatus::InvalidArgument, "need 0 < n <= 255 and target < n"));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(fail(MsctStatus::InvalidArgument, "logits must be finite"));
        }
        let priors = SourcePriors::new(priors.to_vec())?;
        let d = SourceId::new(target as u8, n)?;
        *out = logit_adjusted_ce(logits, d, &priors);
        Ok(())
    })
}
