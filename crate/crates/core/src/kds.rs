//! Kernel-density slice sampling.
//!
//! A Gaussian KDE (Scott bandwidth) is fitted over the per-slice lung areas
//! of a scan. Its CDF is split into eight equal percentile bins and, for
//! each bin midpoint, the slice whose area is closest to the corresponding
//! area quantile is kept. Duplicates are removed and short results padded by
//! repeating the last chosen slice, so every scan yields exactly eight.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::imaging::{extract_lung, lung_area, validate_scan, GraySlice, ImagingConfig, Validation};
use crate::scanio::{DiagnosisLabel, ScanVolume, SourceId};

pub const BUNDLE_LEN: usize = 8;
pub const GRID_POINTS: usize = 512;
/// Grid half-margin around the data, in bandwidths.
pub const GRID_MARGIN: f64 = 4.0;

/// Lung area per usable slice, in slice order.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaProfile {
    pub areas: Vec<usize>,
    pub slice_indices: Vec<usize>,
}

impl AreaProfile {
    pub fn new(areas: Vec<usize>, slice_indices: Vec<usize>) -> Self {
        assert_eq!(areas.len(), slice_indices.len());
        AreaProfile {
            areas,
            slice_indices,
        }
    }

    /// Profile over consecutive slices `0..areas.len()`.
    pub fn contiguous(areas: Vec<usize>) -> Self {
        let idx = (0..areas.len()).collect();
        AreaProfile::new(areas, idx)
    }

    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Scott(f64),
    /// The sample spread is numerically zero.
    Degenerate,
}

/// `sd * n^(-1/5)`.
pub fn scott_rule(sample_sd: f64, n: usize) -> f64 {
    sample_sd / (n as f64).powf(0.2)
}

/// Scott's rule with the n-1 sample standard deviation.
pub fn scott_bandwidth(areas: &[f64]) -> Result<Bandwidth> {
    let n = areas.len();
    if n < 2 {
        return Err(Error::InsufficientSlices(n));
    }
    let mean = areas.iter().sum::<f64>() / n as f64;
    let var = areas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let eps = 1e-9 * mean.abs().max(1.0);
    if sd < eps {
        Ok(Bandwidth::Degenerate)
    } else {
        Ok(Bandwidth::Scott(scott_rule(sd, n)))
    }
}

/// Standard normal CDF.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Fitted KDE tabulated on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    pub centers: Vec<f64>,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl KdeModel {
    pub fn density(&self, a: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (self.centers.len() as f64 * h * (2.0 * PI).sqrt());
        norm * self
            .centers
            .iter()
            .map(|c| (-(a - c).powi(2) / (2.0 * h * h)).exp())
            .sum::<f64>()
    }

    /// Closed-form CDF: mean of the kernel CDFs.
    pub fn cdf_at(&self, a: f64) -> f64 {
        let h = self.bandwidth;
        self.centers
            .iter()
            .map(|c| std_normal_cdf((a - c) / h))
            .sum::<f64>()
            / self.centers.len() as f64
    }

    /// Inverts the tabulated CDF by linear interpolation between grid points.
    pub fn quantile(&self, q: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < q);
        if i == 0 {
            return self.grid[0];
        }
        if i == self.grid.len() {
            return *self.grid.last().unwrap();
        }
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (g0, g1) = (self.grid[i - 1], self.grid[i]);
        if c1 <= c0 {
            return g1;
        }
        g0 + (q - c0) / (c1 - c0) * (g1 - g0)
    }
}

/// Tabulates the KDE CDF on the default 512-point grid.
pub fn kde_cdf(areas: &[f64], h: f64) -> KdeModel {
    kde_cdf_on_grid(areas, h, GRID_POINTS)
}

pub fn kde_cdf_on_grid(areas: &[f64], h: f64, points: usize) -> KdeModel {
    assert!(h > 0.0, "bandwidth must be positive");
    assert!(!areas.is_empty() && points >= 2);
    let lo = areas.iter().copied().fold(f64::INFINITY, f64::min) - GRID_MARGIN * h;
    let hi = areas.iter().copied().fold(f64::NEG_INFINITY, f64::max) + GRID_MARGIN * h;
    let step = (hi - lo) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points)
        .map(|i| if i + 1 == points { hi } else { lo + i as f64 * step })
        .collect();
    let mut model = KdeModel {
        centers: areas.to_vec(),
        bandwidth: h,
        grid,
        cdf: Vec::new(),
    };
    let mut cdf: Vec<f64> = model.grid.iter().map(|&g| model.cdf_at(g)).collect();
    // Rounding in the kernel sum must not break monotonicity.
    for i in 1..cdf.len() {
        if cdf[i] < cdf[i - 1] {
            cdf[i] = cdf[i - 1];
        }
    }
    model.cdf = cdf;
    model
}

/// Percentile bin midpoints `(k + 0.5) / 8`.
pub fn target_percentiles() -> [f64; BUNDLE_LEN] {
    std::array::from_fn(|k| (k as f64 + 0.5) / BUNDLE_LEN as f64)
}

/// Picks eight original slice indices, non-decreasing.
pub fn kds_select(profile: &AreaProfile) -> [usize; BUNDLE_LEN] {
    kds_select_on_grid(profile, GRID_POINTS)
}

pub fn kds_select_on_grid(profile: &AreaProfile, grid_points: usize) -> [usize; BUNDLE_LEN] {
    let n = profile.len();
    assert!(n >= 1, "empty area profile");
    let areas: Vec<f64> = profile.areas.iter().map(|&a| a as f64).collect();
    let h = match scott_bandwidth(&areas) {
        Ok(Bandwidth::Scott(h)) => h,
        Ok(Bandwidth::Degenerate) | Err(_) => {
            return std::array::from_fn(|k| {
                let pos = ((k as f64 + 0.5) * n as f64 / BUNDLE_LEN as f64).floor() as usize;
                profile.slice_indices[pos.min(n - 1)]
            });
        }
    };
    let model = kde_cdf_on_grid(&areas, h, grid_points);
    let mut chosen: Vec<usize> = target_percentiles()
        .iter()
        .map(|&q| {
            let target = model.quantile(q);
            nearest_area(profile, target)
        })
        .collect();
    chosen.sort_unstable();
    chosen.dedup();
    let last = *chosen.last().unwrap();
    chosen.resize(BUNDLE_LEN, last);
    chosen.try_into().unwrap()
}

/// Original index of the slice whose area is closest to `target`; ties go to
/// the lower original index.
fn nearest_area(profile: &AreaProfile, target: f64) -> usize {
    let mut best: Option<(f64, usize)> = None;
    for (&a, &idx) in profile.areas.iter().zip(&profile.slice_indices) {
        let d = (a as f64 - target).abs();
        best = match best {
            Some((bd, bi)) if bd < d || (bd == d && bi < idx) => Some((bd, bi)),
            _ => Some((d, idx)),
        };
    }
    best.unwrap().1
}

/// Eight processed slices summarising one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceBundle {
    pub images: Vec<GraySlice>,
    pub chosen_indices: [usize; BUNDLE_LEN],
}

impl SliceBundle {
    pub fn resolution(&self) -> usize {
        self.images[0].width
    }
}

/// A bundle with the targets of its scan.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBundle {
    pub scan_id: String,
    pub source: SourceId,
    pub label: DiagnosisLabel,
    pub bundle: SliceBundle,
}

pub fn bundle(volume: &ScanVolume, chosen: &[usize; BUNDLE_LEN], config: &ImagingConfig) -> SliceBundle {
    let mut chosen_indices = *chosen;
    chosen_indices.sort_unstable();
    let images = chosen_indices
        .iter()
        .map(|&z| extract_lung(&volume.slice(z), config.threshold, config.target).image)
        .collect();
    SliceBundle {
        images,
        chosen_indices,
    }
}

/// Outcome of preprocessing one scan.
#[derive(Debug, Clone, PartialEq)]
pub enum Preprocessed {
    Bundle {
        bundle: SliceBundle,
        profile: AreaProfile,
    },
    Rejected(String),
}

/// Validation, area profile, selection and bundling for one volume.
pub fn preprocess_volume(volume: &ScanVolume, config: &ImagingConfig) -> Preprocessed {
    let slices = volume.slices();
    let areas_all: Vec<usize> = slices.iter().map(|s| lung_area(s, config.threshold)).collect();
    let usable = match validate_scan(&slices, config.threshold) {
        Validation::Accepted { usable } => usable,
        Validation::Rejected(reason) => return Preprocessed::Rejected(reason.to_string()),
    };
    let profile = AreaProfile::new(usable.iter().map(|&i| areas_all[i]).collect(), usable);
    let chosen = kds_select(&profile);
    Preprocessed::Bundle {
        bundle: bundle(volume, &chosen, config),
        profile,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scott_exact_value() {
        assert_eq!(scott_rule(10.0, 32), 5.0);
    }

    #[test]
    fn scott_from_data() {
        // Sample sd of 0..31 is sqrt(88) exactly.
        let areas: Vec<f64> = (0..32).map(|v| v as f64).collect();
        match scott_bandwidth(&areas).unwrap() {
            Bandwidth::Scott(h) => assert!((h - 88f64.sqrt() / 2.0).abs() < 1e-12),
            b => panic!("{b:?}"),
        }
    }

    #[test]
    fn scott_degenerate_and_error() {
        assert_eq!(scott_bandwidth(&[5.0; 10]).unwrap(), Bandwidth::Degenerate);
        assert!(matches!(scott_bandwidth(&[1.0]), Err(Error::InsufficientSlices(1))));
    }

    #[test]
    fn single_center_cdf_half() {
        let m = kde_cdf(&[42.0], 3.0);
        assert_eq!(m.cdf_at(42.0), 0.5);
        assert!(*m.cdf.last().unwrap() >= 0.999);
        assert!(m.cdf[0] <= 0.001);
    }

    #[test]
    fn symmetric_pair_midpoint() {
        let m = kde_cdf(&[0.0, 10.0], 1.0);
        assert!((m.cdf_at(5.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_constant_profile() {
        let p = AreaProfile::contiguous(vec![300; 16]);
        assert_eq!(kds_select(&p), [1, 3, 5, 7, 9, 11, 13, 15]);
    }

    #[test]
    fn short_scan_padded_with_last_choice() {
        let p = AreaProfile::new(vec![10, 20, 30, 40, 50], vec![3, 4, 5, 6, 7]);
        let sel = kds_select(&p);
        assert_eq!(sel.len(), 8);
        let mut distinct = sel.to_vec();
        distinct.dedup();
        assert!(distinct.len() <= 5);
        let last = *distinct.last().unwrap();
        assert!(sel[distinct.len()..].iter().all(|&i| i == last));
        assert!(sel.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn two_clusters_both_represented() {
        let areas: Vec<usize> = (0..16).map(|i| 92 + i).chain((0..16).map(|i| 892 + i)).collect();
        let p = AreaProfile::contiguous(areas.clone());
        let a: Vec<f64> = areas.iter().map(|&v| v as f64).collect();
        let Bandwidth::Scott(h) = scott_bandwidth(&a).unwrap() else {
            panic!("degenerate")
        };
        let model = kde_cdf(&a, h);
        // the eight nearest-area matches, before deduplication
        let matched: Vec<usize> = target_percentiles()
            .iter()
            .map(|&q| nearest_area(&p, model.quantile(q)))
            .collect();
        let low = matched.iter().filter(|&&i| i < 16).count();
        assert!(low >= 3 && 8 - low >= 3, "{matched:?}");
        // the wide bandwidth sends two targets to each end of the low cluster
        let sel = kds_select(&p);
        assert_eq!(sel.iter().filter(|&&i| i < 16).count(), 2, "{sel:?}");
    }

    #[test]
    fn ties_break_to_lower_index() {
        let p = AreaProfile::new(vec![10, 30, 10], vec![0, 1, 2]);
        assert_eq!(nearest_area(&p, 10.0), 0);
        assert_eq!(nearest_area(&p, 20.0), 0);
    }

    #[test]
    fn grid_doubling_does_not_change_selection() {
        let mut differing = 0;
        for seed in 0..50u64 {
            let n = 20 + (seed as usize * 7) % 200;
            let areas: Vec<usize> = (0..n)
                .map(|i| {
                    let t = (i as f64 + 0.5) / n as f64;
                    (1000.0 * (PI * t).sin() + (seed as f64 * 13.7 + i as f64 * 3.1).sin() * 40.0) as usize
                })
                .collect();
            let p = AreaProfile::contiguous(areas.clone());
            if kds_select_on_grid(&p, 512) == kds_select_on_grid(&p, 1024) {
                continue;
            }
            // A disagreement is only acceptable when a target sits on an
            // exact midpoint between two integer areas.
            let fa: Vec<f64> = areas.iter().map(|&a| a as f64).collect();
            let Bandwidth::Scott(h) = scott_bandwidth(&fa).unwrap() else {
                panic!("seed {seed}: degenerate selection differs")
            };
            let (m1, m2) = (kde_cdf_on_grid(&fa, h, 512), kde_cdf_on_grid(&fa, h, 1024));
            let near_tie = target_percentiles().iter().any(|&q| {
                let (a, b) = (m1.quantile(q), m2.quantile(q));
                (a - b).abs() < 0.01 && ((a.fract() - 0.5).abs() < 0.01 || (b.fract() - 0.5).abs() < 0.01)
            });
            assert!(near_tie, "seed {seed}");
            differing += 1;
        }
        assert!(differing <= 2, "{differing} of 50 profiles depend on grid size");
    }

    proptest! {
        #[test]
        fn always_eight_sorted_valid(areas in proptest::collection::vec(0usize..5000, 5..200)) {
            let p = AreaProfile::contiguous(areas);
            let sel = kds_select(&p);
            prop_assert!(sel.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(sel.iter().all(|&i| i < p.len()));
        }

        #[test]
        fn cdf_monotone(areas in proptest::collection::vec(0.0f64..1e4, 2..100)) {
            if let Bandwidth::Scott(h) = scott_bandwidth(&areas).unwrap() {
                let m = kde_cdf(&areas, h);
                prop_assert!(m.cdf.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!(m.cdf[0] <= 0.001);
                prop_assert!(*m.cdf.last().unwrap() >= 0.999);
            }
        }
    }
}
