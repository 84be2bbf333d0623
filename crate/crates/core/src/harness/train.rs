use std::path::Path;

use rand::seq::SliceRandom;

use super::cache::{load_dataset, Dataset};
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::imaging::GraySlice;
use crate::metrics::{evaluate, EvalReport};
use crate::nncore::{
    adam_step, augment, loss_and_grad, AdamHyper, AdamState, AugmentConfig, BatchItem, ModelParams, Mode,
    Precision, Real,
};
use crate::objective::{LossBreakdown, LossConfig, SourcePriors};
use crate::seeding::{child_rng, derive_seed};

/// Training loss and validation metrics after one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: LossBreakdown,
    pub val: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: TrainConfig,
    pub best: EvalReport,
    /// 1-based epoch whose checkpoint was kept.
    pub best_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<LossBreakdown>,
    /// Parameters of the retained checkpoint.
    pub best_params: ModelParams<f64>,
    pub initial_params: ModelParams<f64>,
}

/// Loads the manifest (through the bundle cache) and trains.
pub fn train(config: &TrainConfig) -> Result<RunResult> {
    let config = config.clone().checked()?;
    let cache = config.resolved_cache_dir();
    let data = load_dataset(&config.manifest, config.model.num_sources, &config.imaging(), Some(&cache))?;
    train_on(&config, &data)
}

fn loss_config(config: &TrainConfig, data: &Dataset) -> Result<LossConfig> {
    let priors = if config.uniform_priors || !config.loss.has_source_head() {
        SourcePriors::uniform(config.model.num_sources)
    } else {
        match (&data.priors, &data.prior_error) {
            (Some(p), _) => p.clone(),
            (None, Some(e)) => return Err(Error::Config(e.clone())),
            (None, None) => return Err(Error::EmptySplit("train")),
        }
    };
    LossConfig::new(config.loss, config.gamma, priors)
}

/// Trains on already prepared data; sweeps share one [`Dataset`].
pub fn train_on(config: &TrainConfig, data: &Dataset) -> Result<RunResult> {
    let config = config.clone().checked()?;
    if data.num_sources != config.model.num_sources {
        return Err(Error::Config(format!(
            "dataset has {} sources, model expects {}",
            data.num_sources, config.model.num_sources
        )));
    }
    match config.precision {
        Precision::F64 => run::<f64>(&config, data),
        Precision::F32 => run::<f32>(&config, data),
    }
}

fn run<T: Real>(config: &TrainConfig, data: &Dataset) -> Result<RunResult> {
    let loss = loss_config(config, data)?;
    let hyper = AdamHyper {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamHyper::default()
    };
    let aug = if config.augment {
        AugmentConfig::default()
    } else {
        AugmentConfig::disabled()
    };
    let seed = config.seed;
    let mut params = ModelParams::<T>::init(config.model.clone(), seed)?;
    let initial_params = params.cast::<f64>();
    let mut adam = AdamState::new(params.values.len());
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut step_losses = Vec::new();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(EvalReport, usize, ModelParams<f64>)> = None;

    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut child_rng(seed, "shuffle", &[epoch as u64]));
        let first_step = step_losses.len();
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let key = |pos: usize| [epoch as u64, step as u64, pos as u64];
            let augmented: Vec<Option<Vec<GraySlice>>> = chunk
                .iter()
                .enumerate()
                .map(|(pos, &i)| {
                    config.augment.then(|| {
                        let mut rng = child_rng(seed, "augment", &key(pos));
                        data.train[i].bundle.images.iter().map(|s| augment(s, &mut rng, &aug)).collect()
                    })
                })
                .collect();
            let items: Vec<BatchItem<'_>> = chunk
                .iter()
                .zip(&augmented)
                .enumerate()
                .map(|(pos, (&i, imgs))| {
                    let b = &data.train[i];
                    BatchItem {
                        scan_id: &b.scan_id,
                        images: imgs.as_deref().unwrap_or(&b.bundle.images),
                        label: b.label,
                        source: b.source,
                        dropout_seed: derive_seed(seed, "dropout", &key(pos)),
                    }
                })
                .collect();
            let (parts, grads) = loss_and_grad(&params, &items, &loss, Mode::Train)?;
            adam_step(&mut params, &grads, &mut adam, &hyper);
            if !params.is_finite() {
                return Err(Error::NonFiniteLoss {
                    scan_id: items[0].scan_id.to_string(),
                });
            }
            step_losses.push(parts);
        }
        let train_loss = LossBreakdown::mean(&step_losses[first_step..], loss.gamma);
        let val = evaluate(&params, &data.val, config.decision_threshold)?;
        log::info!(
            "{} seed {seed} epoch {}: loss {:.4} val f1 {:.4} final {:.4}",
            config.config_id(),
            epoch + 1,
            train_loss.total,
            val.f1,
            val.final_score
        );
        if best.as_ref().is_none_or(|(b, _, _)| val.f1 > b.f1) {
            best = Some((val.clone(), epoch + 1, params.cast()));
        }
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val,
        });
    }
    let (best, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(RunResult {
        config: config.clone(),
        best,
        best_epoch,
        epochs,
        step_losses,
        best_params,
        initial_params,
    })
}

/// Per-epoch trajectory as CSV.
pub fn write_trajectory(result: &RunResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "train_loss",
        "detection_loss",
        "source_loss",
        "val_f1",
        "val_auc",
        "val_final_score",
    ])?;
    for e in &result.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.total.to_string(),
            e.train_loss.detection_loss.to_string(),
            e.train_loss.source_loss.to_string(),
            e.val.f1.to_string(),
            e.val.auc.map(|a| a.to_string()).unwrap_or_default(),
            e.val.final_score.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
