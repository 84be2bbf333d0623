//! Evaluation metrics: confusion counts, F1, rank-based AUC-ROC, per-source
//! class F1 and the equally weighted final score.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kds::LabeledBundle;
use crate::nncore::{predict_probability, ModelParams, Real};
use crate::scanio::{DiagnosisLabel, SourceId};

pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub scan_id: String,
    pub source: SourceId,
    pub label: DiagnosisLabel,
    pub covid_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Swaps the roles of the two classes.
    pub fn flipped(&self) -> Self {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Positive iff `covid_probability >= threshold`.
pub fn confusion<'a>(
    records: impl IntoIterator<Item = &'a PredictionRecord>,
    threshold: f64,
) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for r in records {
        match (r.label.is_covid(), r.covid_probability >= threshold) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositiveClass {
    Covid,
    NonCovid,
}

/// `2tp / (2tp + fp + fn)`, 0.0 when undefined.
pub fn f1_binary(counts: &ConfusionCounts, positive: PositiveClass) -> f64 {
    let c = match positive {
        PositiveClass::Covid => *counts,
        PositiveClass::NonCovid => counts.flipped(),
    };
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        0.0
    } else {
        2.0 * c.tp as f64 / den as f64
    }
}

/// Mann-Whitney AUC with average ranks for ties, O(n log n).
pub fn auc_roc(records: &[PredictionRecord]) -> Result<f64> {
    let scores: Vec<(f64, bool)> = records
        .iter()
        .map(|r| (r.covid_probability, r.label.is_covid()))
        .collect();
    auc_from_scores(&scores)
}

pub fn auc_from_scores(scored: &[(f64, bool)]) -> Result<f64> {
    let n_pos = scored.iter().filter(|(_, p)| *p).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 {
        return Err(Error::UndefinedAuc("no positive records"));
    }
    if n_neg == 0 {
        return Err(Error::UndefinedAuc("no negative records"));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));
    // Sum of (doubled) average ranks of positives keeps everything integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scored[order[j]].0 == scored[order[i]].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j share the average (i + 1 + j) / 2.
        let twice_avg = (i + 1 + j) as u64;
        let positives = order[i..j].iter().filter(|&&k| scored[k].1).count() as u64;
        twice_rank_sum += twice_avg * positives;
        i = j;
    }
    let n_pos64 = n_pos as u64;
    let twice_u = twice_rank_sum - n_pos64 * (n_pos64 + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// COVID and non-COVID F1 for one source.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SourceF1 {
    pub f1_covid: f64,
    pub f1_noncovid: f64,
}

impl SourceF1 {
    pub fn average(&self) -> f64 {
        (self.f1_covid + self.f1_noncovid) / 2.0
    }
}

/// Mean over sources of the per-source class-F1 average.
pub fn final_score(per_source: &[SourceF1]) -> f64 {
    final_score_from_averages(&per_source.iter().map(SourceF1::average).collect::<Vec<_>>())
}

pub fn final_score_from_averages(averages: &[f64]) -> f64 {
    if averages.is_empty() {
        return 0.0;
    }
    averages.iter().sum::<f64>() / averages.len() as f64
}

pub fn per_source_f1(
    records: &[PredictionRecord],
    num_sources: usize,
    threshold: f64,
) -> BTreeMap<u8, SourceF1> {
    (0..num_sources as u8)
        .map(|s| {
            let c = confusion(records.iter().filter(|r| r.source.value() == s), threshold);
            (
                s,
                SourceF1 {
                    f1_covid: f1_binary(&c, PositiveClass::Covid),
                    f1_noncovid: f1_binary(&c, PositiveClass::NonCovid),
                },
            )
        })
        .collect()
}

/// All validation metrics of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1: f64,
    /// `None` when the evaluated set holds a single class.
    pub auc: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub per_source: BTreeMap<u8, SourceF1>,
    pub final_score: f64,
    pub counts: ConfusionCounts,
}

impl EvalReport {
    pub fn from_records(records: &[PredictionRecord], num_sources: usize, threshold: f64) -> Self {
        let counts = confusion(records, threshold);
        let per_source = per_source_f1(records, num_sources, threshold);
        let sources: Vec<SourceF1> = per_source.values().copied().collect();
        EvalReport {
            accuracy: counts.accuracy(),
            f1: f1_binary(&counts, PositiveClass::Covid),
            auc: auc_roc(records).ok(),
            sensitivity: counts.sensitivity(),
            specificity: counts.specificity(),
            final_score: final_score(&sources),
            per_source,
            counts,
        }
    }

    /// Recomputes the final score from the per-source map.
    pub fn recomputed_final_score(&self) -> f64 {
        final_score(&self.per_source.values().copied().collect::<Vec<_>>())
    }
}

impl EvalReport {
    /// Column names of [`EvalReport::csv_fields`].
    pub fn csv_header(num_sources: usize) -> Vec<String> {
        let mut h: Vec<String> = ["accuracy", "f1", "auc", "sensitivity", "specificity"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for s in 0..num_sources {
            h.push(format!("s{s}_f1_covid"));
            h.push(format!("s{s}_f1_noncovid"));
        }
        h.push("final_score".into());
        h
    }

    /// Shortest round-trip formatting, so values parse back exactly.
    pub fn csv_fields(&self) -> Vec<String> {
        let mut f = vec![
            self.accuracy.to_string(),
            self.f1.to_string(),
            self.auc.map(|a| a.to_string()).unwrap_or_default(),
            self.sensitivity.to_string(),
            self.specificity.to_string(),
        ];
        for s in self.per_source.values() {
            f.push(s.f1_covid.to_string());
            f.push(s.f1_noncovid.to_string());
        }
        f.push(self.final_score.to_string());
        f
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let c = &self.counts;
        writeln!(f, "scans        {}  (tp {} fp {} tn {} fn {})", c.total(), c.tp, c.fp, c.tn, c.fn_)?;
        writeln!(f, "accuracy     {:.4}", self.accuracy)?;
        writeln!(f, "f1           {:.4}", self.f1)?;
        match self.auc {
            Some(a) => writeln!(f, "auc          {a:.4}")?,
            None => writeln!(f, "auc          undefined (single class)")?,
        }
        writeln!(f, "sensitivity  {:.4}", self.sensitivity)?;
        writeln!(f, "specificity  {:.4}", self.specificity)?;
        writeln!(f, "source  f1_covid  f1_noncovid  average")?;
        for (s, v) in &self.per_source {
            writeln!(f, "{s:>6}  {:>8.4}  {:>11.4}  {:>7.4}", v.f1_covid, v.f1_noncovid, v.average())?;
        }
        write!(f, "final_score  {:.4}", self.final_score)
    }
}

/// Eval-mode predictions for every bundle, in input order.
pub fn predict_all<T: Real>(params: &ModelParams<T>, items: &[LabeledBundle]) -> Result<Vec<PredictionRecord>> {
    items
        .par_iter()
        .map(|it| {
            Ok(PredictionRecord {
                scan_id: it.scan_id.clone(),
                source: it.source,
                label: it.label,
                covid_probability: predict_probability(params, &it.bundle.images)?,
            })
        })
        .collect()
}

pub fn evaluate<T: Real>(params: &ModelParams<T>, items: &[LabeledBundle], threshold: f64) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    let records = predict_all(params, items)?;
    Ok(EvalReport::from_records(&records, params.config.num_sources, threshold))
}
