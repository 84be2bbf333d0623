//! Procedural multi-source CT phantoms.
//!
//! Each scan is a body ellipse on a background with two darker lung
//! ellipses whose size follows a smooth depth profile: small at the apices,
//! largest mid-scan. COVID scans get bright Gaussian lesions inside the lungs
//! of mid-depth slices. Every source applies its own brightness, contrast,
//! field of view and noise, and contributes a different number of scans.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, IoContext, Result};
use crate::imaging::GraySlice;
use crate::scanio::{
    write_manifest, write_scan, DiagnosisLabel, ManifestRecord, ScanVolume, SourceId, Split,
};
use crate::seeding::{child_rng, Rng};

pub const BACKGROUND_LEVEL: f64 = 0.5;
pub const BODY_LEVEL: f64 = 0.85;
pub const LUNG_LEVEL: f64 = 0.1;
/// Width of the soft tissue boundaries, in normalized frame units.
pub const EDGE_WIDTH: f64 = 0.02;
/// Smallest lung scale, reached at the first and last slice.
pub const APEX_SCALE: f64 = 0.25;
/// Depth fraction interval where lesions live.
pub const LESION_BAND: (f64, f64) = (0.2, 0.8);
/// Lesion Gaussian sigma as a fraction of the lung's minor radius.
pub const LESION_SIGMA: (f64, f64) = (0.4, 0.6);
pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Per-source acquisition characteristics.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceProfile {
    pub source: SourceId,
    /// Added after the contrast gain, in normalized intensity.
    pub brightness_offset: f64,
    pub contrast_gain: f64,
    /// Fraction of the frame half-width spanned by the body.
    pub field_of_view: f64,
    pub noise_sigma: f64,
    /// Inclusive slice count interval.
    pub slice_count_range: (usize, usize),
}

impl SourceProfile {
    pub fn identity(source: SourceId, slice_count_range: (usize, usize)) -> Self {
        SourceProfile {
            source,
            brightness_offset: 0.0,
            contrast_gain: 1.0,
            field_of_view: 0.9,
            noise_sigma: 0.0,
            slice_count_range,
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("source {}: {what}", self.source)));
        if !(-0.3..=0.3).contains(&self.brightness_offset) {
            return bad("brightness_offset outside [-0.3, 0.3]");
        }
        if !(0.6..=1.6).contains(&self.contrast_gain) {
            return bad("contrast_gain outside [0.6, 1.6]");
        }
        if !(self.field_of_view > 0.5 && self.field_of_view <= 1.0) {
            return bad("field_of_view outside (0.5, 1.0]");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        let (lo, hi) = self.slice_count_range;
        if lo < 5 || lo > hi {
            return bad("slice_count_range must satisfy 5 <= lo <= hi");
        }
        Ok(())
    }

    /// Maps a clean phantom intensity through this source's acquisition.
    #[inline]
    pub fn transform(&self, v: f64) -> f64 {
        (self.contrast_gain * v + self.brightness_offset).clamp(0.0, 1.0)
    }
}

/// The four default sources. Values are chosen so the shift is measurable
/// while every source still separates lung from body at the default
/// threshold.
pub fn default_profiles() -> Vec<SourceProfile> {
    let p = |s: u8, b: f64, c: f64, fov: f64, noise: f64, range: (usize, usize)| SourceProfile {
        source: SourceId::new(s, 4).unwrap(),
        brightness_offset: b,
        contrast_gain: c,
        field_of_view: fov,
        noise_sigma: noise,
        slice_count_range: range,
    };
    vec![
        p(0, 0.0, 1.0, 0.92, 0.010, (50, 90)),
        p(1, 0.06, 0.85, 0.80, 0.015, (60, 110)),
        p(2, -0.05, 1.2, 0.72, 0.005, (50, 80)),
        p(3, 0.10, 0.9, 0.86, 0.020, (70, 130)),
    ]
}

/// Scan counts for one source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitCounts {
    pub covid_train: usize,
    pub noncovid_train: usize,
    pub covid_val: usize,
    pub noncovid_val: usize,
}

impl SplitCounts {
    pub fn train(&self) -> usize {
        self.covid_train + self.noncovid_train
    }

    pub fn val(&self) -> usize {
        self.covid_val + self.noncovid_val
    }

    fn cells(&self) -> [(Split, DiagnosisLabel, usize); 4] {
        [
            (Split::Train, DiagnosisLabel::Covid, self.covid_train),
            (Split::Train, DiagnosisLabel::NonCovid, self.noncovid_train),
            (Split::Val, DiagnosisLabel::Covid, self.covid_val),
            (Split::Val, DiagnosisLabel::NonCovid, self.noncovid_val),
        ]
    }
}

/// Full-size per-source counts after preprocessing.
pub const REFERENCE_COUNTS: [SplitCounts; 4] = [
    SplitCounts { covid_train: 165, noncovid_train: 163, covid_val: 45, noncovid_val: 45 },
    SplitCounts { covid_train: 165, noncovid_train: 165, covid_val: 45, noncovid_val: 45 },
    SplitCounts { covid_train: 165, noncovid_train: 165, covid_val: 38, noncovid_val: 45 },
    SplitCounts { covid_train: 69, noncovid_train: 165, covid_val: 0, noncovid_val: 45 },
];

pub const DEFAULT_SCALE: f64 = 0.1;

/// Scales [`REFERENCE_COUNTS`]: rounded, at least 2 per nonempty cell,
/// empty cells stay empty.
pub fn scaled_counts(factor: f64) -> Vec<SplitCounts> {
    let scale = |n: usize| {
        if n == 0 {
            0
        } else {
            ((n as f64 * factor).round() as usize).max(2)
        }
    };
    REFERENCE_COUNTS
        .iter()
        .map(|c| SplitCounts {
            covid_train: scale(c.covid_train),
            noncovid_train: scale(c.noncovid_train),
            covid_val: scale(c.covid_val),
            noncovid_val: scale(c.noncovid_val),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub counts: Vec<SplitCounts>,
    pub profiles: Vec<SourceProfile>,
    pub resolution: usize,
    /// Inclusive lesion count interval for COVID scans.
    pub lesion_count_range: (usize, usize),
    pub lesion_intensity_delta: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig::scaled(DEFAULT_SCALE)
    }
}

impl GenConfig {
    pub fn scaled(factor: f64) -> Self {
        GenConfig {
            counts: scaled_counts(factor),
            profiles: default_profiles(),
            resolution: 64,
            lesion_count_range: (1, 4),
            lesion_intensity_delta: 0.25,
            seed: 0,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.counts.len() != self.profiles.len() {
            return Err(Error::Config(format!(
                "{} count rows for {} source profiles",
                self.counts.len(),
                self.profiles.len()
            )));
        }
        for (i, p) in self.profiles.iter().enumerate() {
            if p.source.index() != i {
                return Err(Error::Config(format!("profile {i} is for source {}", p.source)));
            }
            p.check()?;
        }
        if self.resolution < 8 {
            return Err(Error::Config("resolution must be at least 8".into()));
        }
        let (lo, hi) = self.lesion_count_range;
        if lo < 1 || lo > hi {
            return Err(Error::Config("lesion_count_range must satisfy 1 <= lo <= hi".into()));
        }
        if !(self.lesion_intensity_delta > 0.0) {
            return Err(Error::Config("lesion_intensity_delta must be positive".into()));
        }
        Ok(())
    }

    pub fn total_scans(&self) -> usize {
        self.counts.iter().map(|c| c.train() + c.val()).sum()
    }
}

/// Axis-aligned ellipse in normalized frame coordinates ([-1, 1] on both axes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub ax: f64,
    pub ay: f64,
}

impl Ellipse {
    /// Normalized elliptical radius: 1 on the boundary.
    #[inline]
    pub fn rho(&self, u: f64, v: f64) -> f64 {
        let dx = (u - self.cx) / self.ax;
        let dy = (v - self.cy) / self.ay;
        (dx * dx + dy * dy).sqrt()
    }

    /// Soft membership: 1 inside, 0 outside, linear ramp of `EDGE_WIDTH`
    /// centred on the boundary.
    #[inline]
    fn membership(&self, u: f64, v: f64) -> f64 {
        let d = (self.rho(u, v) - 1.0) * self.ax.min(self.ay);
        (0.5 - d / EDGE_WIDTH).clamp(0.0, 1.0)
    }

    fn scaled(&self, s: f64) -> Ellipse {
        Ellipse {
            ax: self.ax * s,
            ay: self.ay * s,
            ..*self
        }
    }
}

/// A lesion anchored in lung-relative coordinates so it stays inside the
/// lung as the lung shrinks and grows along depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lesion {
    pub lung: usize,
    /// Offset of the centre in units of the lung semi-axes.
    pub rel_x: f64,
    pub rel_y: f64,
    /// Standard deviation in units of the lung's smaller semi-axis.
    pub rel_sigma: f64,
}

/// Ground-truth anatomy for one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub depth: usize,
    pub body: Ellipse,
    /// Lungs at full (mid-scan) size.
    pub lungs: [Ellipse; 2],
    pub lesions: Vec<Lesion>,
    pub lesion_delta: f64,
}

/// Depth position of slice `z` in (0, 1).
#[inline]
pub fn depth_fraction(z: usize, depth: usize) -> f64 {
    (z as f64 + 0.5) / depth as f64
}

pub fn in_lesion_band(z: usize, depth: usize) -> bool {
    let t = depth_fraction(z, depth);
    t >= LESION_BAND.0 && t <= LESION_BAND.1
}

/// Lung scale at depth fraction `t`; lung area is proportional to its square.
#[inline]
pub fn lung_scale(t: f64) -> f64 {
    APEX_SCALE + (1.0 - APEX_SCALE) * (PI * t).sin().max(0.0).sqrt()
}

#[inline]
fn pixel_coord(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64 * 2.0 - 1.0
}

impl Phantom {
    pub fn lungs_at(&self, z: usize) -> [Ellipse; 2] {
        let s = lung_scale(depth_fraction(z, self.depth));
        [self.lungs[0].scaled(s), self.lungs[1].scaled(s)]
    }

    /// Clean intensity of slice `z` at `resolution`, before any source transform.
    pub fn render_slice(&self, z: usize, resolution: usize) -> Vec<f64> {
        let lungs = self.lungs_at(z);
        let lesions = in_lesion_band(z, self.depth);
        let mut out = Vec::with_capacity(resolution * resolution);
        for y in 0..resolution {
            let v = pixel_coord(y, resolution);
            for x in 0..resolution {
                let u = pixel_coord(x, resolution);
                let mb = self.body.membership(u, v);
                let mut value = BACKGROUND_LEVEL + (BODY_LEVEL - BACKGROUND_LEVEL) * mb;
                for (k, lung) in lungs.iter().enumerate() {
                    let ml = lung.membership(u, v).min(mb);
                    if ml <= 0.0 {
                        continue;
                    }
                    value += (LUNG_LEVEL - value) * ml;
                    if lesions {
                        let r = lung.ax.min(lung.ay);
                        for lesion in self.lesions.iter().filter(|l| l.lung == k) {
                            let lx = lung.cx + lesion.rel_x * lung.ax;
                            let ly = lung.cy + lesion.rel_y * lung.ay;
                            let sigma = lesion.rel_sigma * r;
                            let d2 = (u - lx).powi(2) + (v - ly).powi(2);
                            value += self.lesion_delta * (-d2 / (2.0 * sigma * sigma)).exp() * ml;
                        }
                    }
                }
                out.push(value.clamp(0.0, 1.0));
            }
        }
        out
    }

    /// Analytic lung mask: pixel centres inside either lung ellipse.
    pub fn lung_mask(&self, z: usize, resolution: usize) -> Vec<bool> {
        let lungs = self.lungs_at(z);
        let mut out = Vec::with_capacity(resolution * resolution);
        for y in 0..resolution {
            let v = pixel_coord(y, resolution);
            for x in 0..resolution {
                let u = pixel_coord(x, resolution);
                out.push(lungs.iter().any(|l| l.rho(u, v) <= 1.0));
            }
        }
        out
    }

    pub fn analytic_lung_area(&self, z: usize, resolution: usize) -> usize {
        self.lung_mask(z, resolution).iter().filter(|&&b| b).count()
    }
}

/// Draws scan anatomy. Consumes the rng in a fixed order.
pub fn synth_phantom(
    profile: &SourceProfile,
    label: DiagnosisLabel,
    lesion_count_range: (usize, usize),
    lesion_delta: f64,
    rng: &mut Rng,
) -> Phantom {
    let fov = profile.field_of_view;
    let (lo, hi) = profile.slice_count_range;
    let depth = rng.random_range(lo..=hi);
    let body = Ellipse {
        cx: 0.0,
        cy: 0.0,
        ax: fov * rng.random_range(0.95..=1.0),
        ay: fov * rng.random_range(0.72..=0.78),
    };
    let sep = 0.40 * fov * rng.random_range(0.95..=1.05);
    let cy = rng.random_range(-0.03..=0.03) * fov;
    let ax = 0.25 * fov * rng.random_range(0.9..=1.1);
    let ay = 0.48 * fov * rng.random_range(0.9..=1.05);
    let lungs = [
        Ellipse { cx: -sep, cy, ax, ay },
        Ellipse { cx: sep, cy, ax, ay },
    ];
    let lesions = if label.is_covid() {
        let (lo, hi) = lesion_count_range;
        let n = rng.random_range(lo..=hi);
        (0..n)
            .map(|_| {
                let radius = 0.45 * rng.random::<f64>().sqrt();
                let angle = rng.random_range(0.0..2.0 * PI);
                Lesion {
                    lung: rng.random_range(0..2),
                    rel_x: radius * angle.cos(),
                    rel_y: radius * angle.sin(),
                    rel_sigma: rng.random_range(LESION_SIGMA.0..=LESION_SIGMA.1),
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    Phantom {
        depth,
        body,
        lungs,
        lesions,
        lesion_delta,
    }
}

#[inline]
pub fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * u16::MAX as f64).round() as u16
}

/// Renders a phantom through a source profile.
pub fn render_volume(
    scan_id: &str,
    phantom: &Phantom,
    profile: &SourceProfile,
    label: DiagnosisLabel,
    resolution: usize,
    rng: &mut Rng,
) -> ScanVolume {
    let noise = (profile.noise_sigma > 0.0).then(|| Normal::new(0.0, profile.noise_sigma).unwrap());
    let mut voxels = Vec::with_capacity(resolution * resolution * phantom.depth);
    for z in 0..phantom.depth {
        for clean in phantom.render_slice(z, resolution) {
            let mut v = profile.transform(clean);
            if let Some(noise) = &noise {
                v = (v + noise.sample(rng)).clamp(0.0, 1.0);
            }
            voxels.push(quantize(v));
        }
    }
    ScanVolume::new(
        scan_id,
        resolution,
        resolution,
        phantom.depth,
        voxels,
        profile.source,
        label,
    )
    .expect("rendered volume has consistent shape")
}

/// One synthetic scan. Deterministic in the rng state.
pub fn synth_scan(
    profile: &SourceProfile,
    label: DiagnosisLabel,
    config: &GenConfig,
    rng: &mut Rng,
) -> ScanVolume {
    let phantom = synth_phantom(
        profile,
        label,
        config.lesion_count_range,
        config.lesion_intensity_delta,
        rng,
    );
    render_volume("synthetic", &phantom, profile, label, config.resolution, rng)
}

/// One planned scan of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPlan {
    pub index: usize,
    pub scan_id: String,
    pub source: SourceId,
    pub label: DiagnosisLabel,
    pub split: Split,
}

/// Scan order: source, then train COVID, train non-COVID, val COVID, val non-COVID.
pub fn plan_dataset(config: &GenConfig) -> Vec<ScanPlan> {
    let mut plan = Vec::with_capacity(config.total_scans());
    for (s, counts) in config.counts.iter().enumerate() {
        let source = config.profiles[s].source;
        for (split, label, n) in counts.cells() {
            for _ in 0..n {
                let index = plan.len();
                let tag = if label.is_covid() { "covid" } else { "noncovid" };
                plan.push(ScanPlan {
                    index,
                    scan_id: format!("s{}-{}-{}-{index:05}", source, split.as_str(), tag),
                    source,
                    label,
                    split,
                });
            }
        }
    }
    plan
}

/// Ground-truth phantom for a planned scan, as used by [`generate_dataset`].
pub fn planned_phantom(config: &GenConfig, plan: &ScanPlan) -> (Phantom, Rng) {
    let mut rng = child_rng(config.seed, "scan", &[plan.index as u64]);
    let phantom = synth_phantom(
        &config.profiles[plan.source.index()],
        plan.label,
        config.lesion_count_range,
        config.lesion_intensity_delta,
        &mut rng,
    );
    (phantom, rng)
}

pub fn planned_volume(config: &GenConfig, plan: &ScanPlan) -> ScanVolume {
    let (phantom, mut rng) = planned_phantom(config, plan);
    render_volume(
        &plan.scan_id,
        &phantom,
        &config.profiles[plan.source.index()],
        plan.label,
        config.resolution,
        &mut rng,
    )
}

/// Writes every scan plus `manifest.jsonl` under `out_dir`; returns the manifest path.
pub fn generate_dataset(config: &GenConfig, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    config.check()?;
    let out_dir = out_dir.as_ref();
    let scans_dir = out_dir.join("scans");
    fs::create_dir_all(&scans_dir).with_path(&scans_dir)?;
    let plan = plan_dataset(config);
    let records = plan
        .par_iter()
        .map(|p| {
            let rel = PathBuf::from("scans").join(format!("{}.msct", p.scan_id));
            write_scan(&planned_volume(config, p), out_dir.join(&rel))?;
            Ok(ManifestRecord {
                scan_id: p.scan_id.clone(),
                path: rel,
                source: p.source,
                label: p.label,
                split: p.split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = out_dir.join(MANIFEST_NAME);
    write_manifest(&records, &manifest)?;
    Ok(manifest)
}

/// Slice as a [`GraySlice`] directly from a clean phantom (testing aid).
pub fn clean_slice(phantom: &Phantom, z: usize, resolution: usize) -> GraySlice {
    GraySlice::new(resolution, resolution, phantom.render_slice(z, resolution))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::child_rng;

    #[test]
    fn default_counts_follow_reference_proportions() {
        let counts = scaled_counts(DEFAULT_SCALE);
        assert_eq!(counts[3].covid_val, 0);
        let train: Vec<usize> = counts.iter().map(SplitCounts::train).collect();
        let total: usize = train.iter().sum();
        let reference = [328.0, 330.0, 330.0, 234.0].map(|c| c / 1222.0);
        for (t, r) in train.iter().zip(reference) {
            assert!((*t as f64 / total as f64 - r).abs() <= 0.01);
        }
        assert!(counts.iter().flat_map(|c| [c.covid_train, c.noncovid_train, c.noncovid_val]).all(|n| n >= 2));
    }

    #[test]
    fn full_scale_reproduces_reference() {
        assert_eq!(scaled_counts(1.0), REFERENCE_COUNTS.to_vec());
    }

    #[test]
    fn default_profiles_valid_and_distinct() {
        let profiles = default_profiles();
        for p in &profiles {
            p.check().unwrap();
        }
        for i in 0..profiles.len() {
            for j in i + 1..profiles.len() {
                let (a, b) = (&profiles[i], &profiles[j]);
                let differing = [
                    a.brightness_offset != b.brightness_offset,
                    a.contrast_gain != b.contrast_gain,
                    a.field_of_view != b.field_of_view,
                    a.noise_sigma != b.noise_sigma,
                    a.slice_count_range != b.slice_count_range,
                ]
                .iter()
                .filter(|&&d| d)
                .count();
                assert!(differing >= 2, "profiles {i} and {j}");
            }
        }
    }

    #[test]
    fn same_seed_same_volume() {
        let config = GenConfig::default();
        let profile = &config.profiles[1];
        let a = synth_scan(profile, DiagnosisLabel::Covid, &config, &mut child_rng(5, "t", &[]));
        let b = synth_scan(profile, DiagnosisLabel::Covid, &config, &mut child_rng(5, "t", &[]));
        assert_eq!(a, b);
        let c = synth_scan(profile, DiagnosisLabel::Covid, &config, &mut child_rng(6, "t", &[]));
        assert_ne!(a, c);
    }

    /// Mask pixels whose four neighbours are also in the mask, i.e. clear of
    /// the soft boundary ramp.
    fn interior(mask: &[bool], r: usize) -> Vec<bool> {
        (0..r * r)
            .map(|i| {
                let (x, y) = (i % r, i / r);
                mask[i]
                    && x > 0
                    && y > 0
                    && x + 1 < r
                    && y + 1 < r
                    && mask[i - 1]
                    && mask[i + 1]
                    && mask[i - r]
                    && mask[i + r]
            })
            .collect()
    }

    #[test]
    fn non_covid_has_no_lesions() {
        let config = GenConfig::default();
        for seed in 0..10 {
            let p = synth_phantom(&config.profiles[0], DiagnosisLabel::NonCovid, (1, 4), 0.25, &mut child_rng(seed, "t", &[]));
            assert!(p.lesions.is_empty());
            // Clean intensity inside the lungs stays at the lung level.
            for z in (0..p.depth).filter(|&z| in_lesion_band(z, p.depth)) {
                let img = p.render_slice(z, 64);
                let mask = interior(&p.lung_mask(z, 64), 64);
                let max = img.iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| *v).fold(0.0, f64::max);
                assert!(max < LUNG_LEVEL + 0.25 / 2.0, "max {max}");
            }
        }
    }

    #[test]
    fn covid_lesions_inside_lungs() {
        let config = GenConfig::default();
        let mut rng = child_rng(11, "t", &[]);
        let p = synth_phantom(&config.profiles[2], DiagnosisLabel::Covid, (1, 4), 0.25, &mut rng);
        assert!((1..=4).contains(&p.lesions.len()));
        let z = p.depth / 2;
        let img = p.render_slice(z, 64);
        let mask = p.lung_mask(z, 64);
        let hot_outside = img
            .iter()
            .zip(&mask)
            .filter(|(v, &m)| !m && **v > LUNG_LEVEL && **v < BACKGROUND_LEVEL - 0.05)
            .count();
        let hot_inside = img.iter().zip(&mask).filter(|(v, &m)| m && **v > LUNG_LEVEL + 0.125).count();
        assert!(hot_inside > 0);
        // Only the soft lung boundary produces intermediate values outside the mask.
        assert!(hot_outside < 200, "{hot_outside}");
        // No lesion outside the band.
        let apex = p.render_slice(0, 64);
        let apex_mask = interior(&p.lung_mask(0, 64), 64);
        assert!(apex.iter().zip(&apex_mask).filter(|(_, &m)| m).all(|(v, _)| *v < LUNG_LEVEL + 0.05));
    }

    #[test]
    fn identity_profile_reproduces_clean_phantom() {
        let config = GenConfig::default();
        let profile = SourceProfile::identity(SourceId::new(0, 4).unwrap(), (20, 30));
        let mut rng = child_rng(3, "t", &[]);
        let phantom = synth_phantom(&profile, DiagnosisLabel::Covid, (1, 4), 0.25, &mut rng.clone());
        let volume = synth_scan(&profile, DiagnosisLabel::Covid, &config, &mut rng);
        assert_eq!(volume.depth, phantom.depth);
        for z in 0..volume.depth {
            let expected: Vec<u16> = phantom.render_slice(z, 64).into_iter().map(quantize).collect();
            assert_eq!(volume.raw_slice(z), &expected[..]);
        }
    }

    #[test]
    fn lung_area_small_at_apex_large_mid_scan() {
        let config = GenConfig::default();
        let p = synth_phantom(&config.profiles[0], DiagnosisLabel::NonCovid, (1, 4), 0.25, &mut child_rng(1, "t", &[]));
        let areas: Vec<usize> = (0..p.depth).map(|z| p.analytic_lung_area(z, 64)).collect();
        let mid = areas[p.depth / 2];
        assert!(areas[0] * 4 < mid);
        assert!(*areas.last().unwrap() * 4 < mid);
        assert!(areas.iter().all(|&a| a > 0));
    }

    #[test]
    fn empty_counts_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let config = GenConfig {
            counts: vec![SplitCounts::default(); 4],
            ..GenConfig::default()
        };
        let manifest = generate_dataset(&config, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(manifest).unwrap(), "");
        assert_eq!(fs::read_dir(dir.path().join("scans")).unwrap().count(), 0);
    }
}
