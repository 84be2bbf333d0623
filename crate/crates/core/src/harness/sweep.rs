use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::cache::{load_dataset, Dataset};
use super::config::{SweepConfig, TrainConfig};
use super::report::{render_markdown, write_gamma_curves, write_results, ResultRow};
use super::train::train_on;
use crate::error::{IoContext, Result};
use crate::objective::LossKind;

/// Every run of a sweep: per seed, the baseline then each kind x gamma.
pub fn plan_runs(sweep: &SweepConfig) -> Vec<TrainConfig> {
    let mut runs = Vec::new();
    for &seed in &sweep.seeds {
        let base = TrainConfig {
            seed,
            ..sweep.base.clone()
        };
        runs.push(base.baseline());
        for &loss in &sweep.losses {
            for &gamma in &sweep.gammas {
                runs.push(TrainConfig {
                    loss,
                    gamma,
                    ..base.clone()
                });
            }
        }
    }
    runs
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub results_csv: PathBuf,
    pub markdown: PathBuf,
    pub gamma_curves: Vec<PathBuf>,
}

/// Runs the grid on a shared dataset. A failing run becomes an error row.
pub fn run_grid(sweep: &SweepConfig, data: &Dataset) -> Vec<ResultRow> {
    let runs = plan_runs(sweep);
    let one = |cfg: &TrainConfig| match train_on(cfg, data) {
        Ok(r) => ResultRow::from_run(&r),
        Err(e) => {
            log::error!("{} seed {} failed: {e}", cfg.config_id(), cfg.seed);
            ResultRow::failed(cfg, &e.to_string())
        }
    };
    if sweep.parallel {
        runs.par_iter().map(one).collect()
    } else {
        runs.iter().map(one).collect()
    }
}

pub fn sweep(config: &SweepConfig) -> Result<SweepOutcome> {
    config.check()?;
    let base = config.base.clone();
    let data = load_dataset(
        &base.manifest,
        base.model.num_sources,
        &base.imaging(),
        Some(&base.resolved_cache_dir()),
    )?;
    let rows = run_grid(config, &data);
    write_outputs(config, &rows, &config.out_dir)
}

pub fn write_outputs(config: &SweepConfig, rows: &[ResultRow], out_dir: &Path) -> Result<SweepOutcome> {
    fs::create_dir_all(out_dir).with_path(out_dir)?;
    let results_csv = out_dir.join("results.csv");
    write_results(rows, config.base.model.num_sources, &results_csv)?;
    let markdown = out_dir.join("report.md");
    let md = render_markdown(rows, &config.base.model);
    fs::write(&markdown, md).with_path(&markdown)?;
    let gamma_curves = write_gamma_curves(rows, out_dir)?;
    Ok(SweepOutcome {
        rows: rows.to_vec(),
        results_csv,
        markdown,
        gamma_curves,
    })
}

/// Median of the final score per configuration id over successful runs.
pub fn median_final_scores(rows: &[ResultRow]) -> BTreeMap<String, f64> {
    let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(m) = &r.metrics {
            by.entry(r.config_id.clone()).or_default().push(m.final_score);
        }
    }
    by.into_iter().map(|(k, v)| (k, median(v))).collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Best configuration id of one loss kind by median final score.
pub fn best_of_kind(medians: &BTreeMap<String, f64>, kind: LossKind) -> Option<(String, f64)> {
    let prefix = format!("{kind}@");
    medians
        .iter()
        .filter(|(k, _)| k.starts_with(&prefix))
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, v)| (k.clone(), *v))
}
