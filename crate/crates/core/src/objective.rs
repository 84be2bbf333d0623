//! Detection and source losses.
//!
//! * detection: binary cross-entropy on the COVID logit;
//! * source: logit-adjusted cross-entropy, where the log prior of each source
//!   is added to its logit before the softmax, or the plain cross-entropy
//!   used by the multi-task baseline;
//! * combined: `detection + gamma * source`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scanio::{DiagnosisLabel, ManifestRecord, SourceId, Split};

/// Empirical source proportions of the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePriors {
    p: Vec<f64>,
    log_p: Vec<f64>,
    /// `log p - max log p`: same softmax, and exactly zero for uniform priors.
    offsets: Vec<f64>,
}

impl SourcePriors {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() || p.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Config(format!("priors must be positive: {p:?}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("priors sum to {sum}, not 1")));
        }
        let log_p: Vec<f64> = p.iter().map(|x| x.ln()).collect();
        let top = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let offsets = log_p.iter().map(|l| l - top).collect();
        Ok(SourcePriors { p, log_p, offsets })
    }

    pub fn uniform(num_sources: usize) -> Self {
        SourcePriors::new(vec![1.0 / num_sources as f64; num_sources]).unwrap()
    }

    /// Normalizes raw counts; every count must be positive.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if let Some(s) = counts.iter().position(|&c| c == 0) {
            return Err(Error::MissingSourcePrior(s as u8));
        }
        let total: usize = counts.iter().sum();
        SourcePriors::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn log_priors(&self) -> &[f64] {
        &self.log_p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// `p(d) = #train scans from d / #train scans`.
pub fn estimate_priors(records: &[ManifestRecord], num_sources: usize) -> Result<SourcePriors> {
    let mut counts = vec![0usize; num_sources];
    for r in records.iter().filter(|r| r.split == Split::Train) {
        counts[r.source.index()] += 1;
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::EmptySplit("train"));
    }
    SourcePriors::from_counts(&counts)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
#[inline]
pub fn bce(logit: f64, y: DiagnosisLabel) -> f64 {
    let t = y.target();
    logit.max(0.0) - logit * t + (-logit.abs()).exp().ln_1p()
}

/// d bce / d logit.
#[inline]
pub fn bce_grad(logit: f64, y: DiagnosisLabel) -> f64 {
    sigmoid(logit) - y.target()
}

/// `-log softmax(logits)[target]` via log-sum-exp.
fn softmax_ce(logits: &[f64], target: usize) -> f64 {
    let (arg, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, l)| if l > best.1 { (i, l) } else { best });
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, l)| (l - max).exp())
        .sum();
    (max - logits[target]) + rest.ln_1p()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn softmax_ce_grad(logits: &[f64], target: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[target] -= 1.0;
    g
}

fn adjusted(logits: &[f64], priors: &SourcePriors) -> Vec<f64> {
    assert_eq!(logits.len(), priors.len(), "one logit per source");
    logits
        .iter()
        .zip(&priors.offsets)
        .map(|(f, lp)| f + lp)
        .collect()
}

pub fn standard_ce(logits: &[f64], d: SourceId) -> f64 {
    softmax_ce(logits, d.index())
}

pub fn standard_ce_grad(logits: &[f64], d: SourceId) -> Vec<f64> {
    softmax_ce_grad(logits, d.index())
}

/// Cross-entropy on `f_d + log p(d)`.
pub fn logit_adjusted_ce(logits: &[f64], d: SourceId, priors: &SourcePriors) -> f64 {
    softmax_ce(&adjusted(logits, priors), d.index())
}

/// `softmax(f + log p) - onehot(d)`.
pub fn logit_adjusted_ce_grad(logits: &[f64], d: SourceId, priors: &SourcePriors) -> Vec<f64> {
    softmax_ce_grad(&adjusted(logits, priors), d.index())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// Detection head only.
    BceOnly,
    /// Plus plain cross-entropy on the source head.
    MtCe,
    /// Plus logit-adjusted cross-entropy on the source head.
    MtLa,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::BceOnly => "bce_only",
            LossKind::MtCe => "mt_ce",
            LossKind::MtLa => "mt_la",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LossKind::BceOnly => "Baseline (BCE)",
            LossKind::MtCe => "Multi-task (CE)",
            LossKind::MtLa => "Multi-task + LA",
        }
    }

    pub fn has_source_head(self) -> bool {
        self != LossKind::BceOnly
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bce_only" | "bce" | "baseline" => Ok(LossKind::BceOnly),
            "mt_ce" | "ce" => Ok(LossKind::MtCe),
            "mt_la" | "la" => Ok(LossKind::MtLa),
            other => Err(Error::Config(format!("unknown loss kind {other:?}"))),
        }
    }
}

/// Loss components. `total == detection_loss + gamma * source_loss`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub detection_loss: f64,
    pub source_loss: f64,
    pub gamma: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(detection_loss: f64, source_loss: f64, gamma: f64) -> Self {
        LossBreakdown {
            detection_loss,
            source_loss,
            gamma,
            total: detection_loss + gamma * source_loss,
        }
    }

    /// Mean of per-scan components, recombined so the invariant holds exactly.
    pub fn mean(parts: &[LossBreakdown], gamma: f64) -> Self {
        let n = parts.len().max(1) as f64;
        let det = parts.iter().map(|p| p.detection_loss).sum::<f64>() / n;
        let src = parts.iter().map(|p| p.source_loss).sum::<f64>() / n;
        LossBreakdown::new(det, src, gamma)
    }
}

/// Everything needed to score one scan's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub gamma: f64,
    pub priors: SourcePriors,
}

impl LossConfig {
    pub fn new(kind: LossKind, gamma: f64, priors: SourcePriors) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be >= 0, got {gamma}")));
        }
        let gamma = if kind == LossKind::BceOnly { 0.0 } else { gamma };
        Ok(LossConfig {
            kind,
            gamma,
            priors,
        })
    }

    /// Whether the source head takes part in the objective at all.
    pub fn source_active(&self) -> bool {
        self.kind.has_source_head() && self.gamma > 0.0
    }

    pub fn source_loss(&self, source_logits: &[f64], d: SourceId) -> f64 {
        match self.kind {
            LossKind::BceOnly => 0.0,
            LossKind::MtCe => standard_ce(source_logits, d),
            LossKind::MtLa => logit_adjusted_ce(source_logits, d, &self.priors),
        }
    }

    /// Per-scan loss and its gradients w.r.t. the covid logit and source logits.
    pub fn loss_and_grads(
        &self,
        covid_logit: f64,
        y: DiagnosisLabel,
        source_logits: &[f64],
        d: SourceId,
    ) -> (LossBreakdown, f64, Vec<f64>) {
        let det = bce(covid_logit, y);
        let dz = bce_grad(covid_logit, y);
        if !self.source_active() {
            let src = self.source_loss(source_logits, d);
            return (
                LossBreakdown::new(det, src, self.gamma),
                dz,
                vec![0.0; source_logits.len()],
            );
        }
        let (src, mut ds) = match self.kind {
            LossKind::MtCe => (standard_ce(source_logits, d), standard_ce_grad(source_logits, d)),
            LossKind::MtLa => (
                logit_adjusted_ce(source_logits, d, &self.priors),
                logit_adjusted_ce_grad(source_logits, d, &self.priors),
            ),
            LossKind::BceOnly => unreachable!(),
        };
        for g in &mut ds {
            *g *= self.gamma;
        }
        (LossBreakdown::new(det, src, self.gamma), dz, ds)
    }
}

pub fn combined_loss(
    covid_logit: f64,
    y: DiagnosisLabel,
    source_logits: &[f64],
    d: SourceId,
    priors: &SourcePriors,
    gamma: f64,
) -> LossBreakdown {
    LossBreakdown::new(
        bce(covid_logit, y),
        logit_adjusted_ce(source_logits, d, priors),
        gamma,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scanio::{ManifestRecord, Split};
    use proptest::prelude::*;

    fn src(d: u8) -> SourceId {
        SourceId::new(d, 4).unwrap()
    }

    fn records(counts: [usize; 4]) -> Vec<ManifestRecord> {
        let mut out = Vec::new();
        for (s, &n) in counts.iter().enumerate() {
            for i in 0..n {
                out.push(ManifestRecord {
                    scan_id: format!("{s}-{i}"),
                    path: "x".into(),
                    source: src(s as u8),
                    label: DiagnosisLabel::Covid,
                    split: Split::Train,
                });
            }
        }
        out.push(ManifestRecord {
            scan_id: "val".into(),
            path: "x".into(),
            source: src(0),
            label: DiagnosisLabel::NonCovid,
            split: Split::Val,
        });
        out
    }

    #[test]
    fn priors_from_reference_train_counts() {
        let p = estimate_priors(&records([328, 330, 330, 234]), 4).unwrap();
        let expected = [0.26841, 0.27005, 0.27005, 0.19149];
        for (a, b) in p.probabilities().iter().zip(expected) {
            assert!((a - b).abs() < 5e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn equal_counts_uniform() {
        let p = estimate_priors(&records([3, 3, 3, 3]), 4).unwrap();
        assert_eq!(p.probabilities(), &[0.25; 4]);
    }

    #[test]
    fn absent_source_rejected() {
        assert!(matches!(
            estimate_priors(&records([3, 0, 3, 3]), 4),
            Err(Error::MissingSourcePrior(1))
        ));
    }

    #[test]
    fn bce_values() {
        assert!((bce(0.0, DiagnosisLabel::Covid) - 2f64.ln()).abs() < 1e-15);
        assert!((bce(3f64.ln(), DiagnosisLabel::Covid) + 0.75f64.ln()).abs() < 1e-15);
        let tiny = bce(-50.0, DiagnosisLabel::NonCovid);
        assert!((0.0..1e-20).contains(&tiny));
        assert!(bce(800.0, DiagnosisLabel::NonCovid).is_finite());
    }

    #[test]
    fn la_uniform_zero_logits() {
        let u = SourcePriors::uniform(4);
        for d in 0..4 {
            assert!((logit_adjusted_ce(&[0.0; 4], src(d), &u) - 4f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn la_two_source_reduction() {
        let p = SourcePriors::new(vec![0.75, 0.25]).unwrap();
        let d = SourceId::new(1, 2).unwrap();
        assert!((logit_adjusted_ce(&[1.0, 1.0], d, &p) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_values() {
        assert!((standard_ce(&[0.0; 4], src(2)) - 4f64.ln()).abs() < 1e-15);
        let v = standard_ce(&[10.0, 0.0, 0.0, 0.0], src(0));
        assert!((v / (3.0 * (-10f64).exp()).ln_1p() - 1.0).abs() < 1e-12);
        assert!((v - 1.36e-4).abs() < 1e-6);
    }

    #[test]
    fn combined_gamma_cases() {
        let b = LossBreakdown::new(0.4, 0.6, 0.5);
        assert!((b.total - 0.7).abs() < 1e-15);
        let p = SourcePriors::uniform(4);
        let zero = combined_loss(0.3, DiagnosisLabel::Covid, &[0.1, 0.2, 0.3, 0.4], src(1), &p, 0.0);
        assert_eq!(zero.total, zero.detection_loss);
        let one = combined_loss(0.3, DiagnosisLabel::Covid, &[0.1, 0.2, 0.3, 0.4], src(1), &p, 1.0);
        assert_eq!(one.total, one.detection_loss + one.source_loss);
    }

    #[test]
    fn rare_source_gets_larger_loss() {
        let p = SourcePriors::from_counts(&[328, 330, 330, 234]).unwrap();
        let rare = logit_adjusted_ce(&[0.0; 4], src(3), &p);
        let common = logit_adjusted_ce(&[0.0; 4], src(1), &p);
        assert!(rare > common);
    }

    #[test]
    fn bce_only_zeroes_source_gradient() {
        let cfg = LossConfig::new(LossKind::BceOnly, 0.7, SourcePriors::uniform(4)).unwrap();
        assert_eq!(cfg.gamma, 0.0);
        let (_, _, ds) = cfg.loss_and_grads(0.2, DiagnosisLabel::Covid, &[1.0, 2.0, 3.0, 4.0], src(0));
        assert!(ds.iter().all(|&g| g == 0.0));
    }

    fn fd(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn shift_invariance(l in proptest::collection::vec(-20.0f64..20.0, 4), c in -50.0f64..50.0, d in 0u8..4) {
            let p = SourcePriors::from_counts(&[328, 330, 330, 234]).unwrap();
            let shifted: Vec<f64> = l.iter().map(|x| x + c).collect();
            prop_assert!((standard_ce(&l, src(d)) - standard_ce(&shifted, src(d))).abs() < 1e-12);
            prop_assert!((logit_adjusted_ce(&l, src(d), &p) - logit_adjusted_ce(&shifted, src(d), &p)).abs() < 1e-12);
        }

        #[test]
        fn uniform_la_equals_ce(l in proptest::collection::vec(-20.0f64..20.0, 4), d in 0u8..4) {
            let u = SourcePriors::uniform(4);
            prop_assert!((logit_adjusted_ce(&l, src(d), &u) - standard_ce(&l, src(d))).abs() < 1e-12);
        }

        #[test]
        fn la_grad_matches_fd(l in proptest::collection::vec(-5.0f64..5.0, 4), d in 0u8..4) {
            let p = SourcePriors::from_counts(&[328, 330, 330, 234]).unwrap();
            let g = logit_adjusted_ce_grad(&l, src(d), &p);
            let n = fd(|x| logit_adjusted_ce(x, src(d), &p), &l);
            for (a, b) in g.iter().zip(&n) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }

        #[test]
        fn combined_affine_in_gamma(z in -5.0f64..5.0, g1 in 0.0f64..2.0, g2 in 0.0f64..2.0) {
            let p = SourcePriors::from_counts(&[3, 3, 3, 2]).unwrap();
            let l = [0.3, -0.1, 0.7, 0.2];
            let a = combined_loss(z, DiagnosisLabel::Covid, &l, src(3), &p, g1);
            let b = combined_loss(z, DiagnosisLabel::Covid, &l, src(3), &p, g2);
            if g1 != g2 {
                prop_assert!(((b.total - a.total) / (g2 - g1) - a.source_loss).abs() < 1e-9);
            }
        }
    }
}
