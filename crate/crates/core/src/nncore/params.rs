use rand::Rng as _;

use super::Real;
use crate::error::{Error, Result};
use crate::seeding::child_rng;

/// Shape knobs of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Side length of the square input slices.
    pub resolution: usize,
    /// Output channels of each 3x3 conv block; every block halves resolution.
    pub widths: Vec<usize>,
    pub feature_dim: usize,
    pub num_sources: usize,
    /// Dropout rate applied before each head in training mode.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            resolution: 64,
            widths: vec![8, 16, 32],
            feature_dim: 128,
            num_sources: 4,
            dropout: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("widths must be nonempty and positive".into()));
        }
        let div = 1usize << self.widths.len();
        if self.resolution == 0 || !self.resolution.is_multiple_of(div) {
            return Err(Error::Config(format!(
                "resolution {} must be a positive multiple of {div} for {} blocks",
                self.resolution,
                self.widths.len()
            )));
        }
        if self.feature_dim == 0 || self.num_sources < 2 {
            return Err(Error::Config("feature_dim must be > 0 and num_sources >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Input channels of block `l`.
    pub fn in_channels(&self, l: usize) -> usize {
        if l == 0 {
            1
        } else {
            self.widths[l - 1]
        }
    }

    /// Spatial side length entering block `l`.
    pub fn side(&self, l: usize) -> usize {
        self.resolution >> l
    }

    pub fn last_width(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    ConvWeight(usize),
    ConvBias(usize),
    ProjWeight,
    ProjBias,
    CovidWeight,
    CovidBias,
    SourceWeight,
    SourceBias,
}

impl GroupKind {
    pub fn is_source_head(self) -> bool {
        matches!(self, GroupKind::SourceWeight | GroupKind::SourceBias)
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            GroupKind::ConvBias(_) | GroupKind::ProjBias | GroupKind::CovidBias | GroupKind::SourceBias
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub kind: GroupKind,
    pub offset: usize,
    pub len: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl ParamGroup {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Where each tensor lives in the flat parameter vector. The order is also
/// the checkpoint order: per block conv weight `[out][in][3][3]` then bias,
/// projection `[D][C]` and bias, COVID head `[D]` and bias, source head
/// `[S][D]` and bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub groups: Vec<ParamGroup>,
    pub total: usize,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut groups = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, kind, len, fan_in, fan_out| {
            groups.push(ParamGroup {
                name,
                kind,
                offset,
                len,
                fan_in,
                fan_out,
            });
            offset += len;
        };
        for (l, &out) in config.widths.iter().enumerate() {
            let inp = config.in_channels(l);
            push(format!("conv{l}.weight"), GroupKind::ConvWeight(l), out * inp * 9, inp * 9, out * 9);
            push(format!("conv{l}.bias"), GroupKind::ConvBias(l), out, inp * 9, out * 9);
        }
        let (c, d, s) = (config.last_width(), config.feature_dim, config.num_sources);
        push("proj.weight".into(), GroupKind::ProjWeight, d * c, c, d);
        push("proj.bias".into(), GroupKind::ProjBias, d, c, d);
        push("covid.weight".into(), GroupKind::CovidWeight, d, d, 1);
        push("covid.bias".into(), GroupKind::CovidBias, 1, d, 1);
        push("source.weight".into(), GroupKind::SourceWeight, s * d, d, s);
        push("source.bias".into(), GroupKind::SourceBias, s, d, s);
        Layout {
            groups,
            total: offset,
        }
    }

    pub fn group(&self, kind: GroupKind) -> &ParamGroup {
        self.groups
            .iter()
            .find(|g| g.kind == kind)
            .expect("group exists for this layout")
    }
}

/// All trainable tensors in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub values: Vec<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.check()?;
        let layout = Layout::new(&config);
        let values = vec![T::zero(); layout.total];
        Ok(ModelParams {
            config,
            layout,
            values,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ModelParams::zeros(config)?;
        let mut rng = child_rng(seed, "init", &[]);
        for g in &params.layout.groups {
            if g.kind.is_bias() {
                continue;
            }
            let limit = (6.0 / (g.fan_in + g.fan_out) as f64).sqrt();
            for v in &mut params.values[g.range()] {
                *v = T::from_f64(rng.random_range(-limit..=limit));
            }
        }
        Ok(params)
    }

    pub fn from_values(config: ModelConfig, values: Vec<T>) -> Result<Self> {
        config.check()?;
        let layout = Layout::new(&config);
        if values.len() != layout.total {
            return Err(Error::Config(format!(
                "{} values for a model with {} parameters",
                values.len(),
                layout.total
            )));
        }
        Ok(ModelParams {
            config,
            layout,
            values,
        })
    }

    #[inline]
    pub fn get(&self, kind: GroupKind) -> &[T] {
        &self.values[self.layout.group(kind).range()]
    }

    pub fn get_mut(&mut self, kind: GroupKind) -> &mut [T] {
        let r = self.layout.group(kind).range();
        &mut self.values[r]
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Gradient buffer shaped like [`ModelParams`]. Groups flagged inactive took
/// no part in the objective; the optimizer leaves them untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub values: Vec<T>,
    pub active: Vec<bool>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(layout: &Layout) -> Self {
        Gradients {
            values: vec![T::zero(); layout.total],
            active: vec![true; layout.groups.len()],
        }
    }

    pub fn group<'a>(&'a self, layout: &Layout, kind: GroupKind) -> &'a [T] {
        &self.values[layout.group(kind).range()]
    }
}
