//! Result rows, the results CSV and the markdown summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::TrainConfig;
use super::train::RunResult;
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, SourceF1};
use crate::nncore::ModelConfig;
use crate::objective::LossKind;

/// Headline metrics of one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMetrics {
    pub best_epoch: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub per_source: Vec<SourceF1>,
    pub final_score: f64,
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub config_id: String,
    pub loss: LossKind,
    pub gamma: f64,
    pub seed: u64,
    pub metrics: Option<RowMetrics>,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn from_run(run: &RunResult) -> Self {
        ResultRow::from_report(&run.config, &run.best, run.best_epoch)
    }

    pub fn from_report(config: &TrainConfig, report: &EvalReport, best_epoch: usize) -> Self {
        ResultRow {
            config_id: config.config_id(),
            loss: config.loss,
            gamma: config.gamma,
            seed: config.seed,
            metrics: Some(RowMetrics {
                best_epoch,
                accuracy: report.accuracy,
                f1: report.f1,
                auc: report.auc,
                sensitivity: report.sensitivity,
                specificity: report.specificity,
                per_source: report.per_source.values().copied().collect(),
                final_score: report.final_score,
            }),
            error: None,
        }
    }

    pub fn failed(config: &TrainConfig, error: &str) -> Self {
        ResultRow {
            config_id: config.config_id(),
            loss: config.loss,
            gamma: config.gamma,
            seed: config.seed,
            metrics: None,
            error: Some(error.to_string()),
        }
    }
}

fn header(num_sources: usize) -> Vec<String> {
    let mut h: Vec<String> = ["config_id", "loss", "gamma", "seed", "status", "best_epoch"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(EvalReport::csv_header(num_sources));
    h.push("error".into());
    h
}

pub fn write_results(rows: &[ResultRow], num_sources: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(num_sources))?;
    let metric_cols = EvalReport::csv_header(num_sources).len();
    for r in rows {
        let mut rec = vec![
            r.config_id.clone(),
            r.loss.to_string(),
            r.gamma.to_string(),
            r.seed.to_string(),
        ];
        match &r.metrics {
            Some(m) => {
                rec.push("ok".into());
                rec.push(m.best_epoch.to_string());
                rec.push(m.accuracy.to_string());
                rec.push(m.f1.to_string());
                rec.push(m.auc.map(|a| a.to_string()).unwrap_or_default());
                rec.push(m.sensitivity.to_string());
                rec.push(m.specificity.to_string());
                for s in &m.per_source {
                    rec.push(s.f1_covid.to_string());
                    rec.push(s.f1_noncovid.to_string());
                }
                rec.push(m.final_score.to_string());
            }
            None => {
                rec.push("failed".into());
                rec.extend(std::iter::repeat_n(String::new(), metric_cols + 1));
            }
        }
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn num(field: &str, col: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::Config(format!("results column {col}: bad number {field:?}")))
}

/// Reads a results CSV written by [`write_results`].
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let head = r.headers()?.clone();
    let num_sources = head.iter().filter(|h| h.ends_with("_f1_covid")).count();
    if head.iter().collect::<Vec<_>>() != header(num_sources) {
        return Err(Error::Config(format!("{}: not a results file", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let loss: LossKind = f(1).parse()?;
        let metrics = if f(4) == "ok" {
            let per_source = (0..num_sources)
                .map(|s| {
                    Ok(SourceF1 {
                        f1_covid: num(f(11 + 2 * s), "f1_covid")?,
                        f1_noncovid: num(f(12 + 2 * s), "f1_noncovid")?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(RowMetrics {
                best_epoch: num(f(5), "best_epoch")? as usize,
                accuracy: num(f(6), "accuracy")?,
                f1: num(f(7), "f1")?,
                auc: if f(8).is_empty() { None } else { Some(num(f(8), "auc")?) },
                sensitivity: num(f(9), "sensitivity")?,
                specificity: num(f(10), "specificity")?,
                per_source,
                final_score: num(f(11 + 2 * num_sources), "final_score")?,
            })
        } else {
            None
        };
        let error = rec.get(rec.len() - 1).filter(|e| !e.is_empty()).map(str::to_string);
        rows.push(ResultRow {
            config_id: f(0).to_string(),
            loss,
            gamma: num(f(2), "gamma")?,
            seed: num(f(3), "seed")? as u64,
            metrics,
            error,
        });
    }
    Ok(rows)
}

fn mean_std(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, None);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

fn cell(v: &[f64]) -> String {
    if v.is_empty() {
        return "n/a".into();
    }
    match mean_std(v) {
        (m, Some(s)) => format!("{m:.4} ± {s:.4}"),
        (m, None) => format!("{m:.4}"),
    }
}

struct Group<'a> {
    loss: LossKind,
    gamma: f64,
    ok: Vec<&'a RowMetrics>,
    failed: usize,
}

/// Rows grouped by configuration, in first-appearance order.
fn groups(rows: &[ResultRow]) -> Vec<(String, Group<'_>)> {
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Group<'_>> = BTreeMap::new();
    for r in rows {
        let g = map.entry(r.config_id.clone()).or_insert_with(|| {
            order.push(r.config_id.clone());
            Group {
                loss: r.loss,
                gamma: r.gamma,
                ok: Vec::new(),
                failed: 0,
            }
        });
        match &r.metrics {
            Some(m) => g.ok.push(m),
            None => g.failed += 1,
        }
    }
    order
        .into_iter()
        .map(|k| {
            let g = map.remove(&k).unwrap();
            (k, g)
        })
        .collect()
}

pub fn render_markdown(rows: &[ResultRow], model: &ModelConfig) -> String {
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let multi = seeds.len() >= 2;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# Validation results\n\nFeature dim D = {}, resolution {}, widths {:?}, seeds {:?}.{}\n",
        model.feature_dim,
        model.resolution,
        model.widths,
        seeds,
        if multi { " Cells are mean ± sample std over seeds." } else { "" }
    );
    let _ = writeln!(
        out,
        "| Method | γ | Accuracy | F1 | AUC | Sensitivity | Specificity | Final score |{}",
        if multi { " Median final |" } else { "" }
    );
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|{}", if multi { "---|" } else { "" });
    let gs = groups(rows);
    for (_, g) in &gs {
        let col = |f: &dyn Fn(&RowMetrics) -> Option<f64>| cell(&g.ok.iter().filter_map(|m| f(m)).collect::<Vec<_>>());
        let gamma = if g.loss == LossKind::BceOnly {
            "-".to_string()
        } else {
            g.gamma.to_string()
        };
        let failed = if g.failed > 0 {
            format!(" ({} failed)", g.failed)
        } else {
            String::new()
        };
        let _ = write!(
            out,
            "| {}{failed} | {gamma} | {} | {} | {} | {} | {} | {} |",
            g.loss.label(),
            col(&|m| Some(m.accuracy)),
            col(&|m| Some(m.f1)),
            col(&|m| m.auc),
            col(&|m| Some(m.sensitivity)),
            col(&|m| Some(m.specificity)),
            col(&|m| Some(m.final_score)),
        );
        if multi {
            let finals: Vec<f64> = g.ok.iter().map(|m| m.final_score).collect();
            let med = if finals.is_empty() {
                "n/a".into()
            } else {
                format!("{:.4}", super::sweep::median(finals))
            };
            let _ = write!(out, " {med} |");
        }
        out.push('\n');
    }
    let num_sources = rows
        .iter()
        .find_map(|r| r.metrics.as_ref().map(|m| m.per_source.len()))
        .unwrap_or(0);
    if num_sources > 0 {
        let _ = writeln!(out, "\n## Per-source average F1 (COVID and non-COVID)\n");
        let _ = write!(out, "| Method | γ |");
        for s in 0..num_sources {
            let _ = write!(out, " Source {s} |");
        }
        let _ = writeln!(out, " Final score |");
        let _ = writeln!(out, "|---|---|{}---|", "---|".repeat(num_sources));
        for (_, g) in &gs {
            let gamma = if g.loss == LossKind::BceOnly {
                "-".to_string()
            } else {
                g.gamma.to_string()
            };
            let _ = write!(out, "| {} | {gamma} |", g.loss.label());
            for s in 0..num_sources {
                let v: Vec<f64> = g.ok.iter().map(|m| m.per_source[s].average()).collect();
                let _ = write!(out, " {} |", cell(&v));
            }
            let v: Vec<f64> = g.ok.iter().map(|m| m.final_score).collect();
            let _ = writeln!(out, " {} |", cell(&v));
        }
    }
    out
}

/// One two-column `gamma,final_score` file per multi-task loss kind, with
/// the baseline as the gamma = 0 point. Values are means over seeds.
pub fn write_gamma_curves(rows: &[ResultRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let gs = groups(rows);
    let mean_final = |g: &Group<'_>| {
        let v: Vec<f64> = g.ok.iter().map(|m| m.final_score).collect();
        (!v.is_empty()).then(|| mean_std(&v).0)
    };
    let baseline = gs.iter().find(|(_, g)| g.loss == LossKind::BceOnly).and_then(|(_, g)| mean_final(g));
    let mut paths = Vec::new();
    for kind in [LossKind::MtCe, LossKind::MtLa] {
        let mut points: Vec<(f64, f64)> = gs
            .iter()
            .filter(|(_, g)| g.loss == kind)
            .filter_map(|(_, g)| mean_final(g).map(|f| (g.gamma, f)))
            .collect();
        if points.is_empty() {
            continue;
        }
        if let Some(b) = baseline {
            points.push((0.0, b));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path = out_dir.join(format!("gamma_curve_{kind}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["gamma", "final_score"])?;
        for (g, f) in points {
            w.write_record([g.to_string(), f.to_string()])?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id_loss: LossKind, gamma: f64, seed: u64, fs: f64) -> ResultRow {
        let cfg = TrainConfig {
            loss: id_loss,
            gamma,
            seed,
            ..TrainConfig::default()
        };
        let cfg = cfg.checked().unwrap();
        ResultRow {
            config_id: cfg.config_id(),
            loss: cfg.loss,
            gamma: cfg.gamma,
            seed,
            metrics: Some(RowMetrics {
                best_epoch: 2,
                accuracy: 0.9,
                f1: 0.8,
                auc: Some(0.95),
                sensitivity: 0.7,
                specificity: 1.0,
                per_source: vec![SourceF1 { f1_covid: 1.0, f1_noncovid: 0.5 }; 4],
                final_score: fs,
            }),
            error: None,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut rows = vec![row(LossKind::BceOnly, 0.0, 1, 0.75), row(LossKind::MtLa, 0.5, 1, 0.1 + 0.2)];
        rows[1].metrics.as_mut().unwrap().auc = None;
        let failed_cfg = TrainConfig {
            loss: LossKind::MtCe,
            gamma: 0.2,
            seed: 3,
            ..TrainConfig::default()
        };
        rows.push(ResultRow::failed(&failed_cfg, "boom, with comma"));
        write_results(&rows, 4, &path).unwrap();
        assert_eq!(read_results(&path).unwrap(), rows);
    }

    #[test]
    fn markdown_aggregates_seeds() {
        let rows = vec![
            row(LossKind::BceOnly, 0.0, 1, 0.7),
            row(LossKind::BceOnly, 0.0, 2, 0.8),
            row(LossKind::MtLa, 0.5, 1, 0.9),
            row(LossKind::MtLa, 0.5, 2, 0.9),
        ];
        let md = render_markdown(&rows, &ModelConfig::default());
        assert!(md.contains("D = 128"));
        assert!(md.contains("0.7500 ± 0.0707"));
        assert!(md.contains("0.9000 ± 0.0000"));
        let single = render_markdown(&rows[..1], &ModelConfig::default());
        assert!(!single.contains('±'));
    }

    #[test]
    fn gamma_curve_has_two_columns() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row(LossKind::BceOnly, 0.0, 1, 0.7), row(LossKind::MtLa, 0.5, 1, 0.9)];
        let paths = write_gamma_curves(&rows, dir.path()).unwrap();
        assert_eq!(paths.len(), 1);
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(text, "gamma,final_score\n0,0.7\n0.5,0.9\n");
    }
}
