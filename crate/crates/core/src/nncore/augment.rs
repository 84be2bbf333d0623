use rand::Rng as _;

use crate::imaging::GraySlice;
use crate::seeding::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip_p: f64,
    pub jitter_p: f64,
    /// Brightness offset and contrast factor deviation are drawn from `±jitter`.
    pub jitter: f64,
    pub dropout_p: f64,
    pub max_holes: usize,
    /// Hole side as a fraction of the slice width.
    pub hole_fraction: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_p: 0.5,
            jitter_p: 0.5,
            jitter: 0.2,
            dropout_p: 0.2,
            max_holes: 8,
            hole_fraction: 0.125,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            flip_p: 0.0,
            jitter_p: 0.0,
            dropout_p: 0.0,
            ..AugmentConfig::default()
        }
    }
}

pub fn flip_horizontal(slice: &GraySlice) -> GraySlice {
    let mut out = slice.clone();
    for row in out.pixels.chunks_exact_mut(slice.width) {
        row.reverse();
    }
    out
}

/// `clamp(mean + contrast * (p - mean) + brightness)` with the slice mean
/// as the contrast pivot.
pub fn brightness_contrast(slice: &GraySlice, brightness: f64, contrast: f64) -> GraySlice {
    let mean = slice.mean();
    let pixels = slice
        .pixels
        .iter()
        .map(|&p| (mean + contrast * (p - mean) + brightness).clamp(0.0, 1.0))
        .collect();
    GraySlice::new(slice.width, slice.height, pixels)
}

fn coarse_dropout(slice: &mut GraySlice, holes: usize, side: usize, rng: &mut Rng) {
    let side = side.clamp(1, slice.width.min(slice.height));
    for _ in 0..holes {
        let x0 = rng.random_range(0..=slice.width - side);
        let y0 = rng.random_range(0..=slice.height - side);
        for y in y0..y0 + side {
            slice.pixels[y * slice.width + x0..][..side].fill(0.0);
        }
    }
}

/// Training-time augmentation of one slice. Each stage always consumes the
/// same random draws for its decision, so streams stay aligned across configs.
pub fn augment(slice: &GraySlice, rng: &mut Rng, config: &AugmentConfig) -> GraySlice {
    let mut out = if rng.random::<f64>() < config.flip_p {
        flip_horizontal(slice)
    } else {
        slice.clone()
    };
    if rng.random::<f64>() < config.jitter_p {
        let b = rng.random_range(-config.jitter..=config.jitter);
        let c = 1.0 + rng.random_range(-config.jitter..=config.jitter);
        out = brightness_contrast(&out, b, c);
    }
    if rng.random::<f64>() < config.dropout_p {
        let holes = rng.random_range(1..=config.max_holes.max(1));
        let side = (slice.width as f64 * config.hole_fraction).round() as usize;
        coarse_dropout(&mut out, holes, side, rng);
    }
    out
}
