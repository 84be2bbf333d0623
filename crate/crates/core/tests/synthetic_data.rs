use msct_core::imaging::{lung_area, GraySlice, DEFAULT_LUNG_THRESHOLD};
use msct_core::kds::{kds_select, AreaProfile};
use msct_core::scanio::{load_manifest, load_scan, DiagnosisLabel, SourceId};
use msct_core::seeding::{child_rng, hex_digest};
use msct_core::synthgen::{
    clean_slice, default_profiles, generate_dataset, in_lesion_band, plan_dataset, planned_volume, synth_phantom,
    GenConfig, Phantom, SourceProfile, LUNG_LEVEL,
};

fn coord(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64 * 2.0 - 1.0
}

/// Brightest clean pixel well inside either lung over the lesion band.
fn brightest_lung_interior(p: &Phantom, r: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for z in (0..p.depth).filter(|&z| in_lesion_band(z, p.depth)) {
        let px = p.render_slice(z, r);
        let lungs = p.lungs_at(z);
        for y in 0..r {
            for x in 0..r {
                let (u, v) = (coord(x, r), coord(y, r));
                if lungs.iter().any(|l| l.rho(u, v) <= 0.7) {
                    best = best.max(px[y * r + x]);
                }
            }
        }
    }
    best
}

#[test]
fn lesions_separate_classes_inside_lungs() {
    let delta = 0.25;
    let cut = LUNG_LEVEL + delta / 2.0;
    let mut correct = 0;
    let mut total = 0;
    for profile in default_profiles() {
        for (k, label) in [DiagnosisLabel::Covid, DiagnosisLabel::NonCovid].into_iter().enumerate() {
            for i in 0..50u64 {
                let mut rng = child_rng(8, "sep", &[profile.source.value() as u64, k as u64, i]);
                let p = synth_phantom(&profile, label, (1, 4), delta, &mut rng);
                let predicted = brightest_lung_interior(&p, 48) > cut;
                correct += usize::from(predicted == label.is_covid());
                total += 1;
            }
        }
    }
    assert!(correct as f64 >= 0.99 * total as f64, "{correct}/{total}");
}

#[test]
fn mean_intensity_reveals_the_source() {
    // a one-feature nearest-centroid classifier on scan mean intensity
    let config = GenConfig::default();
    let scan_mean = |profile: &SourceProfile, i: u64| {
        let mut rng = child_rng(21, "stump", &[profile.source.value() as u64, i]);
        let v = msct_core::synthgen::synth_scan(profile, DiagnosisLabel::NonCovid, &config, &mut rng);
        v.voxels.iter().map(|&x| x as f64).sum::<f64>() / v.voxels.len() as f64
    };
    let profiles = default_profiles();
    let centroids: Vec<f64> = profiles
        .iter()
        .map(|p| (0..6).map(|i| scan_mean(p, i)).sum::<f64>() / 6.0)
        .collect();
    let mut correct = 0;
    let mut total = 0;
    for (s, p) in profiles.iter().enumerate() {
        for i in 100..110 {
            let m = scan_mean(p, i);
            let guess = (0..centroids.len())
                .min_by(|&a, &b| (centroids[a] - m).abs().total_cmp(&(centroids[b] - m).abs()))
                .unwrap();
            correct += usize::from(guess == s);
            total += 1;
        }
    }
    assert!(correct * 2 > total, "{correct}/{total} vs chance 1/4");
}

/// Noise-free rendering of slice `z` through a source's intensity transform.
fn rendered(p: &Phantom, profile: &SourceProfile, z: usize, r: usize) -> GraySlice {
    let px = clean_slice(p, z, r).pixels.iter().map(|&v| profile.transform(v)).collect();
    GraySlice::new(r, r, px)
}

fn mid_depth_slices(p: &Phantom) -> impl Iterator<Item = usize> + '_ {
    (0..p.depth).filter(|&z| (0.25..=0.75).contains(&((z as f64 + 0.5) / p.depth as f64))).step_by(5)
}

// The 3x3 minimum filter widens dark regions by one pixel, so agreement
// with the analytic area needs lungs that span many pixels.
#[test]
fn lung_area_tracks_ground_truth() {
    let r = 256;
    for profile in default_profiles() {
        let mut rng = child_rng(4, "area", &[profile.source.value() as u64]);
        let p = synth_phantom(&profile, DiagnosisLabel::Covid, (1, 4), 0.25, &mut rng);
        for z in mid_depth_slices(&p) {
            let truth = p.analytic_lung_area(z, r) as f64;
            let got = lung_area(&rendered(&p, &profile, z, r), DEFAULT_LUNG_THRESHOLD) as f64;
            assert!((got - truth).abs() <= 0.05 * truth, "source {} slice {z}: {got} vs {truth}", profile.source);
        }
    }
}

#[test]
fn lung_area_scales_with_resolution() {
    for profile in default_profiles() {
        let mut rng = child_rng(5, "scale", &[profile.source.value() as u64]);
        let p = synth_phantom(&profile, DiagnosisLabel::NonCovid, (1, 1), 0.25, &mut rng);
        for z in mid_depth_slices(&p) {
            let lo = lung_area(&rendered(&p, &profile, z, 128), DEFAULT_LUNG_THRESHOLD) as f64;
            let hi = lung_area(&rendered(&p, &profile, z, 256), DEFAULT_LUNG_THRESHOLD) as f64;
            let ratio = hi / lo;
            assert!((ratio / 4.0 - 1.0).abs() <= 0.1, "source {} slice {z}: ratio {ratio}", profile.source);
        }
    }
}

#[test]
fn dataset_generation_is_reproducible() {
    let config = GenConfig {
        resolution: 24,
        ..GenConfig::scaled(0.02)
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = generate_dataset(&config, a.path()).unwrap();
    let mb = generate_dataset(&config, b.path()).unwrap();
    assert_eq!(std::fs::read(&ma).unwrap(), std::fs::read(&mb).unwrap());
    let records = load_manifest(&ma).unwrap();
    assert_eq!(records.len(), config.total_scans());
    for r in &records {
        let x = std::fs::read(a.path().join(&r.path)).unwrap();
        let y = std::fs::read(b.path().join(&r.path)).unwrap();
        assert_eq!(hex_digest(&x), hex_digest(&y), "{}", r.scan_id);
    }
    for plan in plan_dataset(&config).iter().step_by(7) {
        let r = &records[plan.index];
        assert_eq!((r.source, r.label, r.split), (plan.source, plan.label, plan.split));
        let v = load_scan(r, a.path()).unwrap();
        assert_eq!(v.voxels, planned_volume(&config, plan).voxels, "{}", r.scan_id);
    }

    let other = tempfile::tempdir().unwrap();
    let mc = generate_dataset(&GenConfig { seed: 1, ..config }, other.path()).unwrap();
    let first = &records[0].path;
    assert_ne!(
        std::fs::read(a.path().join(first)).unwrap(),
        std::fs::read(mc.parent().unwrap().join(first)).unwrap()
    );
}

#[test]
fn selection_spreads_over_the_area_distribution() {
    let profile = SourceProfile::identity(SourceId::new(0, 4).unwrap(), (90, 90));
    let mut rng = child_rng(6, "spread", &[]);
    let p = synth_phantom(&profile, DiagnosisLabel::NonCovid, (1, 1), 0.25, &mut rng);
    let areas: Vec<usize> = (0..p.depth)
        .map(|z| lung_area(&clean_slice(&p, z, 64), DEFAULT_LUNG_THRESHOLD))
        .collect();
    let chosen = kds_select(&AreaProfile::contiguous(areas.clone()));
    let mut sorted = areas.clone();
    sorted.sort_unstable();
    let n = areas.len() as f64;
    for (k, &idx) in chosen.iter().enumerate() {
        // fraction of slices with a smaller area, compared with the bin midpoint
        let below = sorted.partition_point(|&a| a < areas[idx]) as f64 / n;
        let at_most = sorted.partition_point(|&a| a <= areas[idx]) as f64 / n;
        let q = (k as f64 + 0.5) / 8.0;
        assert!(below - 0.1 <= q && q <= at_most + 0.1, "pick {k}: rank {below}..{at_most}");
    }
}

#[test]
fn selection_favours_rapidly_changing_slices() {
    // share of picks on slices whose area changes faster than the scan's median rate
    let (mut kds_hits, mut uniform_hits) = (0, 0);
    for i in 0..20u64 {
        let profile = &default_profiles()[(i % 4) as usize];
        let mut rng = child_rng(12, "adapt", &[i]);
        let p = synth_phantom(profile, DiagnosisLabel::NonCovid, (1, 1), 0.25, &mut rng);
        let areas: Vec<usize> = (0..p.depth).map(|z| p.analytic_lung_area(z, 64)).collect();
        let n = areas.len();
        let rate: Vec<usize> = (0..n)
            .map(|z| areas[(z + 1).min(n - 1)].abs_diff(areas[z.saturating_sub(1)]))
            .collect();
        let mut sorted = rate.clone();
        sorted.sort_unstable();
        let median = sorted[n / 2];
        let mut picks = kds_select(&AreaProfile::contiguous(areas)).to_vec();
        picks.dedup();
        let uniform: Vec<usize> = (0..8).map(|k| (2 * k + 1) * n / 16).collect();
        kds_hits += picks.iter().filter(|&&z| rate[z] > median).count() * uniform.len();
        uniform_hits += uniform.iter().filter(|&&z| rate[z] > median).count() * picks.len();
    }
    assert!(kds_hits > uniform_hits, "kds {kds_hits} vs uniform {uniform_hits}");
}
