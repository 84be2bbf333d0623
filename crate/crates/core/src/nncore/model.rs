use std::cmp::Ordering;

use rand::{Rng as _, SeedableRng};
use rayon::prelude::*;

use super::conv::{
    axpy, conv3x3_backward, conv3x3_forward, dot, global_avg_pool, pad1, relu_pool_backward, relu_pool_forward,
    unpad1,
};
use super::params::{Gradients, GroupKind, ModelParams};
use super::Real;
use crate::error::{Error, Result};
use crate::imaging::GraySlice;
use crate::kds::{SliceBundle, BUNDLE_LEN};
use crate::objective::{sigmoid, LossBreakdown, LossConfig};
use crate::scanio::{DiagnosisLabel, SourceId};
use crate::seeding::Rng;

/// Inputs are standardised with these before the first convolution.
pub const INPUT_MEAN: f64 = 0.449;
pub const INPUT_STD: f64 = 0.226;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput {
    pub covid_logit: f64,
    pub source_logits: Vec<f64>,
    pub pooled_feature: Vec<f64>,
}

impl ScanOutput {
    pub fn covid_probability(&self) -> f64 {
        sigmoid(self.covid_logit)
    }
}

#[derive(Debug, Clone)]
struct SliceCache<T> {
    /// Padded input of each block.
    inputs: Vec<Vec<T>>,
    /// Pre-activation conv output of each block.
    pre: Vec<Vec<T>>,
    gap: Vec<T>,
}

/// Forward activations and dropout masks of one scan, reused by [`backward`].
#[derive(Debug, Clone)]
pub struct ScanCache<T> {
    slices: Vec<SliceCache<T>>,
    pooled: Vec<T>,
    covid_mask: Option<Vec<T>>,
    source_mask: Option<Vec<T>>,
}

/// One training example: a (possibly augmented) bundle plus targets.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub scan_id: &'a str,
    pub images: &'a [GraySlice],
    pub label: DiagnosisLabel,
    pub source: SourceId,
    /// Seeds this item's dropout masks.
    pub dropout_seed: u64,
}

fn check_images<T: Real>(params: &ModelParams<T>, images: &[GraySlice]) -> Result<()> {
    let r = params.config.resolution;
    if images.len() != BUNDLE_LEN {
        return Err(Error::Config(format!("expected {BUNDLE_LEN} slices, got {}", images.len())));
    }
    if let Some(bad) = images.iter().find(|s| s.width != r || s.height != r) {
        return Err(Error::Config(format!(
            "slice is {}x{}, model expects {r}x{r}",
            bad.width, bad.height
        )));
    }
    Ok(())
}

fn extract<T: Real>(params: &ModelParams<T>, image: &GraySlice) -> (Vec<T>, SliceCache<T>) {
    let cfg = &params.config;
    let (mean, inv_std) = (INPUT_MEAN, 1.0 / INPUT_STD);
    let mut act: Vec<T> = image.pixels.iter().map(|&p| T::from_f64((p - mean) * inv_std)).collect();
    let mut inputs = Vec::with_capacity(cfg.widths.len());
    let mut pre = Vec::with_capacity(cfg.widths.len());
    for (l, &c_out) in cfg.widths.iter().enumerate() {
        let (c_in, side) = (cfg.in_channels(l), cfg.side(l));
        let padded = pad1(&act, c_in, side, side);
        let z = conv3x3_forward(
            &padded,
            c_in,
            side,
            side,
            params.get(GroupKind::ConvWeight(l)),
            params.get(GroupKind::ConvBias(l)),
            c_out,
        );
        act = relu_pool_forward(&z, c_out, side, side);
        inputs.push(padded);
        pre.push(z);
    }
    let c = cfg.last_width();
    let side = cfg.side(cfg.widths.len());
    let gap = global_avg_pool(&act, c, side * side);
    let w = params.get(GroupKind::ProjWeight);
    let b = params.get(GroupKind::ProjBias);
    let feature = (0..cfg.feature_dim).map(|d| b[d] + dot(&w[d * c..(d + 1) * c], &gap)).collect();
    (feature, SliceCache { inputs, pre, gap })
}

/// Element-wise mean of exactly eight equal-length vectors. Each component
/// is summed pairwise over its sorted values, so the result is bitwise
/// independent of slice order.
pub fn mean_pool<T: Real>(features: &[Vec<T>]) -> Result<Vec<T>> {
    if features.len() != BUNDLE_LEN {
        return Err(Error::Config(format!("mean_pool needs {BUNDLE_LEN} vectors, got {}", features.len())));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Config("mean_pool vectors differ in length".into()));
    }
    let eighth = T::from_f64(0.125);
    Ok((0..d)
        .map(|j| {
            let mut v = [T::zero(); BUNDLE_LEN];
            for (k, f) in features.iter().enumerate() {
                v[k] = f[j];
            }
            v.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
            (((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]))) * eighth
        })
        .collect())
}

fn dropout_mask<T: Real>(rate: f64, len: usize, rng: &mut Rng) -> Option<Vec<T>> {
    if rate == 0.0 {
        return None;
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    Some(
        (0..len)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect(),
    )
}

fn masked<T: Real>(x: &[T], mask: &Option<Vec<T>>) -> Vec<T> {
    match mask {
        Some(m) => x.iter().zip(m).map(|(&a, &b)| a * b).collect(),
        None => x.to_vec(),
    }
}

/// Forward pass that also returns what [`backward`] needs. Dropout masks are
/// drawn from `rng` in train mode, COVID head first.
pub fn forward_scan_cached<T: Real>(
    params: &ModelParams<T>,
    images: &[GraySlice],
    mode: Mode,
    rng: &mut Rng,
) -> Result<(ScanOutput, ScanCache<T>)> {
    check_images(params, images)?;
    let cfg = &params.config;
    let (features, slices): (Vec<_>, Vec<_>) = images.iter().map(|img| extract(params, img)).unzip();
    let pooled = mean_pool(&features)?;
    let d = cfg.feature_dim;
    let (covid_mask, source_mask) = match mode {
        Mode::Train => {
            let c = dropout_mask(cfg.dropout, d, rng);
            let s = dropout_mask(cfg.dropout, d, rng);
            (c, s)
        }
        Mode::Eval => (None, None),
    };
    let hc = masked(&pooled, &covid_mask);
    let hs = masked(&pooled, &source_mask);
    let covid_logit = (params.get(GroupKind::CovidBias)[0] + dot(params.get(GroupKind::CovidWeight), &hc)).as_f64();
    let sw = params.get(GroupKind::SourceWeight);
    let sb = params.get(GroupKind::SourceBias);
    let source_logits = (0..cfg.num_sources)
        .map(|s| (sb[s] + dot(&sw[s * d..(s + 1) * d], &hs)).as_f64())
        .collect();
    let out = ScanOutput {
        covid_logit,
        source_logits,
        pooled_feature: pooled.iter().map(|v| v.as_f64()).collect(),
    };
    let cache = ScanCache {
        slices,
        pooled,
        covid_mask,
        source_mask,
    };
    Ok((out, cache))
}

pub fn forward_scan<T: Real>(
    params: &ModelParams<T>,
    bundle: &SliceBundle,
    mode: Mode,
    rng: &mut Rng,
) -> Result<ScanOutput> {
    forward_scan_cached(params, &bundle.images, mode, rng).map(|(out, _)| out)
}

/// Eval-mode COVID probability.
pub fn predict_probability<T: Real>(params: &ModelParams<T>, images: &[GraySlice]) -> Result<f64> {
    let mut rng = Rng::seed_from_u64(0);
    forward_scan_cached(params, images, Mode::Eval, &mut rng).map(|(out, _)| out.covid_probability())
}

/// Accumulates into `grads` the gradient of a scan whose loss has derivative
/// `dz` w.r.t. the COVID logit and `ds` w.r.t. the source logits. An empty
/// `ds` skips the source head entirely.
pub fn backward<T: Real>(params: &ModelParams<T>, cache: &ScanCache<T>, dz: T, ds: &[T], grads: &mut Gradients<T>) {
    let cfg = &params.config;
    let layout = &params.layout;
    let d = cfg.feature_dim;
    let range = |k: GroupKind| layout.group(k).range();

    let hc = masked(&cache.pooled, &cache.covid_mask);
    axpy(dz, &hc, &mut grads.values[range(GroupKind::CovidWeight)]);
    grads.values[range(GroupKind::CovidBias)][0] += dz;
    let mut dh_c: Vec<T> = params.get(GroupKind::CovidWeight).iter().map(|&w| w * dz).collect();
    if let Some(m) = &cache.covid_mask {
        dh_c.iter_mut().zip(m).for_each(|(g, &k)| *g *= k);
    }
    let mut dpooled = dh_c;

    if !ds.is_empty() {
        let hs = masked(&cache.pooled, &cache.source_mask);
        let sw = params.get(GroupKind::SourceWeight);
        let mut dh_s = vec![T::zero(); d];
        {
            let gw = &mut grads.values[range(GroupKind::SourceWeight)];
            for (s, &g) in ds.iter().enumerate() {
                axpy(g, &hs, &mut gw[s * d..(s + 1) * d]);
                axpy(g, &sw[s * d..(s + 1) * d], &mut dh_s);
            }
        }
        let gb = &mut grads.values[range(GroupKind::SourceBias)];
        for (b, &g) in gb.iter_mut().zip(ds) {
            *b += g;
        }
        if let Some(m) = &cache.source_mask {
            dh_s.iter_mut().zip(m).for_each(|(g, &k)| *g *= k);
        }
        for (a, b) in dpooled.iter_mut().zip(&dh_s) {
            *a += *b;
        }
    }

    let eighth = T::from_f64(0.125);
    let df: Vec<T> = dpooled.iter().map(|&g| g * eighth).collect();
    let c = cfg.last_width();
    let pw = params.get(GroupKind::ProjWeight);
    let blocks = cfg.widths.len();
    for sc in &cache.slices {
        {
            let gw = &mut grads.values[range(GroupKind::ProjWeight)];
            for (j, &g) in df.iter().enumerate() {
                axpy(g, &sc.gap, &mut gw[j * c..(j + 1) * c]);
            }
        }
        for (b, &g) in grads.values[range(GroupKind::ProjBias)].iter_mut().zip(&df) {
            *b += g;
        }
        let mut dgap = vec![T::zero(); c];
        for (j, &g) in df.iter().enumerate() {
            axpy(g, &pw[j * c..(j + 1) * c], &mut dgap);
        }
        let side = cfg.side(blocks);
        let inv = T::from_f64(1.0 / (side * side) as f64);
        let mut dact: Vec<T> = dgap
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * inv, side * side))
            .collect();
        for l in (0..blocks).rev() {
            let (c_in, c_out, side) = (cfg.in_channels(l), cfg.widths[l], cfg.side(l));
            let dzl = relu_pool_backward(&sc.pre[l], &dact, c_out, side, side);
            let wr = range(GroupKind::ConvWeight(l));
            let br = range(GroupKind::ConvBias(l));
            let (lo, hi) = grads.values.split_at_mut(br.start);
            let din = conv3x3_backward(
                &sc.inputs[l],
                c_in,
                side,
                side,
                params.get(GroupKind::ConvWeight(l)),
                c_out,
                &dzl,
                &mut lo[wr],
                &mut hi[..br.len()],
                l > 0,
            );
            if let Some(din) = din {
                dact = unpad1(&din, c_in, side, side);
            }
        }
    }
}

/// Mean combined loss over a batch and its exact gradient. Items are
/// processed in parallel; per-item gradients are summed in batch order.
pub fn loss_and_grad<T: Real>(
    params: &ModelParams<T>,
    batch: &[BatchItem<'_>],
    loss: &LossConfig,
    mode: Mode,
) -> Result<(LossBreakdown, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let n = batch.len() as f64;
    let source_on = loss.source_active();
    let per_item: Vec<Result<(LossBreakdown, Gradients<T>)>> = batch
        .par_iter()
        .map(|item| {
            let mut rng = Rng::seed_from_u64(item.dropout_seed);
            let (out, cache) = forward_scan_cached(params, item.images, mode, &mut rng)?;
            let (parts, dz, ds) = loss.loss_and_grads(out.covid_logit, item.label, &out.source_logits, item.source);
            if !parts.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    scan_id: item.scan_id.to_string(),
                });
            }
            let mut g = Gradients::zeros(&params.layout);
            let ds: Vec<T> = if source_on {
                ds.iter().map(|&v| T::from_f64(v / n)).collect()
            } else {
                Vec::new()
            };
            backward(params, &cache, T::from_f64(dz / n), &ds, &mut g);
            Ok((parts, g))
        })
        .collect();
    let mut total = Gradients::zeros(&params.layout);
    let mut parts = Vec::with_capacity(batch.len());
    for r in per_item {
        let (p, g) = r?;
        parts.push(p);
        for (a, b) in total.values.iter_mut().zip(&g.values) {
            *a += *b;
        }
    }
    if !source_on {
        for (flag, group) in total.active.iter_mut().zip(&params.layout.groups) {
            if group.kind.is_source_head() {
                *flag = false;
            }
        }
    }
    Ok((LossBreakdown::mean(&parts, loss.gamma), total))
}
