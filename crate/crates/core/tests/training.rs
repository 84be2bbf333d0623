use std::path::Path;

use msct_core::harness::{load_dataset, train, train_on, Dataset, TrainConfig};
use msct_core::metrics::evaluate;
use msct_core::nncore::{GroupKind, ModelConfig};
use msct_core::objective::LossKind;
use msct_core::synthgen::{generate_dataset, GenConfig};

fn small_dataset(dir: &Path) -> TrainConfig {
    let gen = GenConfig {
        resolution: 32,
        ..GenConfig::scaled(0.03)
    };
    let manifest = generate_dataset(&gen, dir).unwrap();
    TrainConfig {
        manifest,
        epochs: 2,
        batch_size: 4,
        seed: 3,
        model: ModelConfig {
            resolution: 16,
            widths: vec![4, 8],
            feature_dim: 16,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn data(cfg: &TrainConfig) -> Dataset {
    load_dataset(&cfg.manifest, cfg.model.num_sources, &cfg.imaging(), None).unwrap()
}

#[test]
fn baseline_never_touches_the_source_head() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_dataset(dir.path()).baseline();
    let run = train_on(&cfg, &data(&cfg)).unwrap();
    for kind in [GroupKind::SourceWeight, GroupKind::SourceBias] {
        assert_eq!(run.best_params.get(kind), run.initial_params.get(kind));
    }
    assert_ne!(
        run.best_params.get(GroupKind::CovidWeight),
        run.initial_params.get(GroupKind::CovidWeight)
    );
    assert!(run.step_losses.iter().all(|s| s.total == s.detection_loss));
}

#[test]
fn uniform_priors_reduce_la_to_standard_ce() {
    let dir = tempfile::tempdir().unwrap();
    let base = small_dataset(dir.path());
    let data = data(&base);
    let la = train_on(
        &TrainConfig {
            loss: LossKind::MtLa,
            gamma: 0.5,
            uniform_priors: true,
            ..base.clone()
        },
        &data,
    )
    .unwrap();
    let ce = train_on(
        &TrainConfig {
            loss: LossKind::MtCe,
            gamma: 0.5,
            ..base
        },
        &data,
    )
    .unwrap();
    assert_eq!(la.step_losses.len(), ce.step_losses.len());
    for (a, b) in la.step_losses.iter().zip(&ce.step_losses) {
        assert!((a.total - b.total).abs() < 1e-9, "{} vs {}", a.total, b.total);
    }
}

#[test]
fn stored_metrics_match_a_fresh_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_dataset(dir.path());
    let run = train(&cfg).unwrap();
    let data = data(&cfg);
    let report = evaluate(&run.best_params, &data.val, cfg.decision_threshold).unwrap();
    assert_eq!(report, run.best);
    assert_eq!(report.final_score, report.recomputed_final_score());
    assert!(run.best_epoch >= 1 && run.best_epoch <= cfg.epochs);
    assert_eq!(run.epochs[run.best_epoch - 1].val, run.best);
}

#[test]
fn non_multitask_gamma_is_rejected() {
    let cfg = TrainConfig {
        loss: LossKind::MtLa,
        gamma: 0.0,
        ..TrainConfig::default()
    };
    assert!(cfg.checked().is_err());
}

/// The pinned protocol (lr 1e-4, 8 epochs, 0.5 threshold) leaves both
/// classes on the same side of the cut-off on the default data.
#[test]
#[ignore = "does not reach 0.85 F1 within 8 epochs at lr 1e-4; see README"]
fn default_protocol_reaches_high_f1() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(&GenConfig::default(), dir.path()).unwrap();
    let run = train(&TrainConfig {
        manifest,
        ..TrainConfig::default()
    })
    .unwrap();
    assert!(run.best.f1 >= 0.85, "best val f1 {}", run.best.f1);
}
