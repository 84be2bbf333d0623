//! Per-slice lung isolation: minimum filter, threshold, hole filling,
//! validity checks, bounding-box crop and bilinear resize.

use std::collections::VecDeque;

pub const DEFAULT_LUNG_THRESHOLD: f64 = 0.35;
pub const DEFAULT_TARGET: usize = 64;
pub const MIN_USABLE_SLICES: usize = 5;

/// Row-major grayscale image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GraySlice {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GraySlice {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel count must be width*height");
        GraySlice {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        GraySlice::new(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of set bits.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bbox = Some(match bbox {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bbox
    }
}

/// Knobs for lung extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagingConfig {
    /// Normalized intensity; pixels strictly below it are lung candidates.
    pub threshold: f64,
    /// Output side length after crop and resize.
    pub target: usize,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        ImagingConfig {
            threshold: DEFAULT_LUNG_THRESHOLD,
            target: DEFAULT_TARGET,
        }
    }
}

/// A slice after lung extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedSlice {
    pub image: GraySlice,
    /// Mask pixel count at the original resolution.
    pub lung_area: usize,
}

/// 3x3 minimum filter with replicate padding.
pub fn min_filter3(slice: &GraySlice) -> GraySlice {
    let (w, h) = (slice.width, slice.height);
    // Separable: horizontal pass then vertical pass.
    let mut horiz = vec![0.0; w * h];
    for y in 0..h {
        let row = &slice.pixels[y * w..(y + 1) * w];
        for x in 0..w {
            let l = row[x.saturating_sub(1)];
            let r = row[(x + 1).min(w - 1)];
            horiz[y * w + x] = row[x].min(l).min(r);
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        for x in 0..w {
            out[y * w + x] = horiz[y * w + x].min(horiz[up * w + x]).min(horiz[down * w + x]);
        }
    }
    GraySlice::new(w, h, out)
}

/// Lungs are darker than body tissue: bit set iff `pixel < threshold`.
pub fn binarize(slice: &GraySlice, threshold: f64) -> BinaryMask {
    BinaryMask {
        width: slice.width,
        height: slice.height,
        bits: slice.pixels.iter().map(|&p| p < threshold).collect(),
    }
}

/// Sets every 0-pixel that is not 4-connected to the border through 0-pixels.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |x: usize, y: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        let i = y * w + x;
        if !mask.bits[i] && !outside[i] {
            outside[i] = true;
            queue.push_back(i);
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut queue);
        seed(x, h - 1, &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut queue);
        seed(w - 1, y, &mut outside, &mut queue);
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut visit = |j: usize| {
            if !mask.bits[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    BinaryMask {
        width: w,
        height: h,
        bits: outside.into_iter().map(|o| !o).collect(),
    }
}

/// min filter -> threshold -> hole fill.
pub fn lung_mask(slice: &GraySlice, threshold: f64) -> BinaryMask {
    fill_holes(&binarize(&min_filter3(slice), threshold))
}

pub fn lung_area(slice: &GraySlice, threshold: f64) -> usize {
    lung_mask(slice, threshold).count()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    DimensionMismatch { index: usize },
    TooFewUsable { usable: usize },
    Empty,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::DimensionMismatch { index } => {
                write!(f, "dimension mismatch at slice {index}")
            }
            RejectReason::TooFewUsable { usable } => {
                write!(f, "fewer than five usable slices ({usable})")
            }
            RejectReason::Empty => write!(f, "no slices"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Accepted { usable: Vec<usize> },
    Rejected(RejectReason),
}

impl Validation {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Validation::Accepted { .. })
    }
}

/// Scan-level consistency checks over an arbitrary slice stack.
pub fn validate_stack<F>(slices: &[GraySlice], is_usable: F) -> Validation
where
    F: Fn(&GraySlice) -> bool,
{
    let Some(first) = slices.first() else {
        return Validation::Rejected(RejectReason::Empty);
    };
    if let Some(index) = slices
        .iter()
        .position(|s| s.width != first.width || s.height != first.height)
    {
        return Validation::Rejected(RejectReason::DimensionMismatch { index });
    }
    let usable: Vec<usize> = slices
        .iter()
        .enumerate()
        .filter(|(_, s)| is_usable(s))
        .map(|(i, _)| i)
        .collect();
    if usable.len() < MIN_USABLE_SLICES {
        Validation::Rejected(RejectReason::TooFewUsable {
            usable: usable.len(),
        })
    } else {
        Validation::Accepted { usable }
    }
}

/// A slice is usable when its lung mask is non-empty.
pub fn validate_scan(slices: &[GraySlice], threshold: f64) -> Validation {
    validate_stack(slices, |s| lung_area(s, threshold) > 0)
}

/// Bilinear resize with corner-aligned sampling: output pixel `i` samples
/// source coordinate `i * (src - 1) / (dst - 1)`. Output is clamped to [0, 1].
pub fn resize_bilinear(src: &GraySlice, out_w: usize, out_h: usize) -> GraySlice {
    let coord = |i: usize, src_len: usize, dst_len: usize| -> (usize, usize, f64) {
        if dst_len == 1 || src_len == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64;
        let lo = (pos.floor() as usize).min(src_len - 1);
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| coord(x, src.width, out_w)).collect();
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, src.height, out_h);
        for &(x0, x1, fx) in &cols {
            let top = src.get(x0, y0) * (1.0 - fx) + src.get(x1, y0) * fx;
            let bottom = src.get(x0, y1) * (1.0 - fx) + src.get(x1, y1) * fx;
            pixels.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    GraySlice::new(out_w, out_h, pixels)
}

pub fn crop(src: &GraySlice, x0: usize, y0: usize, x1: usize, y1: usize) -> GraySlice {
    let w = x1 - x0 + 1;
    let h = y1 - y0 + 1;
    let mut pixels = Vec::with_capacity(w * h);
    for y in y0..=y1 {
        pixels.extend_from_slice(&src.pixels[y * src.width + x0..=y * src.width + x1]);
    }
    GraySlice::new(w, h, pixels)
}

/// Full per-slice pipeline. The crop is the mask's tight bounding box (the
/// whole slice when the mask is empty) taken from the unfiltered slice.
pub fn extract_lung(slice: &GraySlice, threshold: f64, target: usize) -> ProcessedSlice {
    let mask = lung_mask(slice, threshold);
    let lung_area = mask.count();
    let cropped = match mask.bounding_box() {
        Some((x0, y0, x1, y1)) => crop(slice, x0, y0, x1, y1),
        None => slice.clone(),
    };
    ProcessedSlice {
        image: resize_bilinear(&cropped, target, target),
        lung_area,
    }
}
