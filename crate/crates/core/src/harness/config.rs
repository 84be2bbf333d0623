//! Run configuration and the flat `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! gen.seed = 7
//! train.loss = mt_la
//! train.gamma = 0.5
//! sweep.gammas = 0.1, 0.2, 0.5, 1.0
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, IoContext, Result};
use crate::imaging::ImagingConfig;
use crate::metrics::DEFAULT_DECISION_THRESHOLD;
use crate::nncore::{ModelConfig, Precision};
use crate::objective::LossKind;
use crate::synthgen::GenConfig;

/// Parsed config file: namespaced key to raw value, with the source line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
            let key = k.trim();
            if key.is_empty() || !key.contains('.') {
                return Err(Error::Config(format!("config line {}: key {key:?} needs a namespace", i + 1)));
            }
            if entries.insert(key.to_string(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Config(format!("config line {}: duplicate key {key}", i + 1)));
            }
        }
        Ok(KvFile { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).with_path(path)?)
    }

    /// Entries of one namespace with the prefix stripped.
    pub fn section(&self, ns: &str) -> Vec<(usize, &str, &str)> {
        let prefix = format!("{ns}.");
        self.entries
            .iter()
            .filter_map(|(k, (line, v))| k.strip_prefix(&prefix).map(|rest| (*line, rest, v.as_str())))
            .collect()
    }
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

pub(crate) fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected a boolean, got {other:?}"))),
    }
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Applies a `gen.*` section to a generator config.
pub fn apply_gen(config: &mut GenConfig, file: &KvFile) -> Result<()> {
    for (line, key, value) in file.section("gen") {
        let k = format!("gen.{key}");
        match key {
            "seed" => config.seed = parse_value(&k, value)?,
            "scale" => {
                let seed = config.seed;
                let resolution = config.resolution;
                *config = GenConfig::scaled(parse_value(&k, value)?);
                config.seed = seed;
                config.resolution = resolution;
            }
            "resolution" => config.resolution = parse_value(&k, value)?,
            "lesion_delta" => config.lesion_intensity_delta = parse_value(&k, value)?,
            "lesions_min" => config.lesion_count_range.0 = parse_value(&k, value)?,
            "lesions_max" => config.lesion_count_range.1 = parse_value(&k, value)?,
            _ => return Err(Error::Config(format!("config line {line}: unknown key {k}"))),
        }
    }
    Ok(())
}

pub fn gen_kv(config: &GenConfig) -> Vec<(String, String)> {
    vec![
        ("gen.seed".into(), config.seed.to_string()),
        ("gen.resolution".into(), config.resolution.to_string()),
        ("gen.lesion_delta".into(), config.lesion_intensity_delta.to_string()),
        ("gen.lesions_min".into(), config.lesion_count_range.0.to_string()),
        ("gen.lesions_max".into(), config.lesion_count_range.1.to_string()),
        ("gen.total_scans".into(), config.total_scans().to_string()),
    ]
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub manifest: PathBuf,
    pub loss: LossKind,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub model: ModelConfig,
    /// Lung-mask threshold of the preprocessing stage.
    pub lung_threshold: f64,
    pub augment: bool,
    pub precision: Precision,
    pub decision_threshold: f64,
    /// Bundle cache directory; defaults to `.cache/bundles` next to the manifest.
    pub cache_dir: Option<PathBuf>,
    /// Replaces the estimated source priors with uniform ones.
    pub uniform_priors: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            manifest: PathBuf::from("data/manifest.jsonl"),
            loss: LossKind::MtLa,
            gamma: 0.5,
            epochs: 8,
            batch_size: 10,
            lr: 1e-4,
            weight_decay: 5e-4,
            seed: 0,
            model: ModelConfig::default(),
            lung_threshold: ImagingConfig::default().threshold,
            augment: true,
            precision: Precision::F64,
            decision_threshold: DEFAULT_DECISION_THRESHOLD,
            cache_dir: None,
            uniform_priors: false,
        }
    }
}

impl TrainConfig {
    pub fn baseline(&self) -> Self {
        TrainConfig {
            loss: LossKind::BceOnly,
            gamma: 0.0,
            ..self.clone()
        }
    }

    /// Normalises and validates: `bce_only` forces gamma to 0, multi-task
    /// kinds need a positive gamma.
    pub fn checked(mut self) -> Result<Self> {
        if self.loss == LossKind::BceOnly {
            self.gamma = 0.0;
        } else if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "{} needs gamma > 0 (gamma = 0 duplicates the baseline), got {}",
                self.loss, self.gamma
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr must be > 0 and weight_decay >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return Err(Error::Config("decision threshold must be in [0, 1]".into()));
        }
        self.model.check()?;
        Ok(self)
    }

    pub fn imaging(&self) -> ImagingConfig {
        ImagingConfig {
            threshold: self.lung_threshold,
            target: self.model.resolution,
        }
    }

    /// Short identifier of the loss configuration, e.g. `mt_la@0.5`.
    pub fn config_id(&self) -> String {
        match self.loss {
            LossKind::BceOnly => "baseline".into(),
            kind => format!("{kind}@{}", self.gamma),
        }
    }

    pub fn resolved_cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| {
            self.manifest
                .parent()
                .unwrap_or(Path::new("."))
                .join(".cache")
                .join("bundles")
        })
    }

    pub fn apply(&mut self, file: &KvFile) -> Result<()> {
        for (line, key, value) in file.section("train") {
            self.set(key, value)
                .map_err(|e| Error::Config(format!("config line {line}: {e}")))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = format!("train.{key}");
        match key {
            "manifest" => self.manifest = PathBuf::from(value),
            "loss" => self.loss = parse_value(&k, value)?,
            "gamma" => self.gamma = parse_value(&k, value)?,
            "epochs" => self.epochs = parse_value(&k, value)?,
            "batch_size" => self.batch_size = parse_value(&k, value)?,
            "lr" => self.lr = parse_value(&k, value)?,
            "weight_decay" => self.weight_decay = parse_value(&k, value)?,
            "seed" => self.seed = parse_value(&k, value)?,
            "resolution" => self.model.resolution = parse_value(&k, value)?,
            "widths" => self.model.widths = parse_list(&k, value)?,
            "feature_dim" => self.model.feature_dim = parse_value(&k, value)?,
            "num_sources" => self.model.num_sources = parse_value(&k, value)?,
            "dropout" => self.model.dropout = parse_value(&k, value)?,
            "lung_threshold" => self.lung_threshold = parse_value(&k, value)?,
            "augment" => self.augment = parse_bool(&k, value)?,
            "precision" => self.precision = parse_value(&k, value)?,
            "decision_threshold" => self.decision_threshold = parse_value(&k, value)?,
            "cache_dir" => self.cache_dir = Some(PathBuf::from(value)),
            "uniform_priors" => self.uniform_priors = parse_bool(&k, value)?,
            _ => return Err(Error::Config(format!("unknown key {k}"))),
        }
        Ok(())
    }

    /// The resolved configuration as `train.*` entries; feeding them back
    /// through [`TrainConfig::set`] reproduces the config.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("manifest", self.manifest.display().to_string()),
            ("loss", self.loss.to_string()),
            ("gamma", self.gamma.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("seed", self.seed.to_string()),
            ("resolution", self.model.resolution.to_string()),
            ("widths", join(&self.model.widths)),
            ("feature_dim", self.model.feature_dim.to_string()),
            ("num_sources", self.model.num_sources.to_string()),
            ("dropout", self.model.dropout.to_string()),
            ("lung_threshold", self.lung_threshold.to_string()),
            ("augment", self.augment.to_string()),
            ("precision", self.precision.as_str().to_string()),
            ("decision_threshold", self.decision_threshold.to_string()),
            ("cache_dir", self.resolved_cache_dir().display().to_string()),
            ("uniform_priors", self.uniform_priors.to_string()),
        ];
        kv.drain(..).map(|(k, v)| (format!("train.{k}"), v)).collect()
    }
}

/// Grid of a gamma sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub base: TrainConfig,
    pub gammas: Vec<f64>,
    pub losses: Vec<LossKind>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Run independent configurations on the rayon pool.
    pub parallel: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            base: TrainConfig::default(),
            gammas: vec![0.1, 0.2, 0.5, 1.0],
            losses: vec![LossKind::MtCe, LossKind::MtLa],
            seeds: vec![1, 2, 3, 4, 5],
            out_dir: PathBuf::from("results"),
            parallel: true,
        }
    }
}

impl SweepConfig {
    pub fn check(&self) -> Result<()> {
        if self.gammas.is_empty() || self.losses.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep grids must be nonempty".into()));
        }
        if self.losses.contains(&LossKind::BceOnly) {
            return Err(Error::Config("the baseline is always included; list only mt_ce / mt_la".into()));
        }
        if self.gammas.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::Config("sweep gammas must be > 0".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, file: &KvFile) -> Result<()> {
        self.base.apply(file)?;
        for (line, key, value) in file.section("sweep") {
            let k = format!("sweep.{key}");
            match key {
                "gammas" => self.gammas = parse_list(&k, value)?,
                "losses" => self.losses = parse_list(&k, value)?,
                "seeds" => self.seeds = parse_list(&k, value)?,
                "out" => self.out_dir = PathBuf::from(value),
                "parallel" => self.parallel = parse_bool(&k, value)?,
                _ => return Err(Error::Config(format!("config line {line}: unknown key {k}"))),
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = self.base.to_kv();
        kv.retain(|(k, _)| k != "train.loss" && k != "train.gamma" && k != "train.seed");
        kv.push(("sweep.gammas".into(), join(&self.gammas)));
        kv.push(("sweep.losses".into(), join(&self.losses)));
        kv.push(("sweep.seeds".into(), join(&self.seeds)));
        kv.push(("sweep.out".into(), self.out_dir.display().to_string()));
        kv.push(("sweep.parallel".into(), self.parallel.to_string()));
        kv
    }
}

pub fn format_kv(kv: &[(String, String)]) -> String {
    kv.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_apply() {
        let text = "# run\ntrain.loss = la  # trailing\ntrain.gamma=0.2\n\ngen.seed = 3\nsweep.seeds = 1, 2,3\n";
        let file = KvFile::parse(text).unwrap();
        let mut t = TrainConfig::default();
        t.apply(&file).unwrap();
        assert_eq!(t.loss, LossKind::MtLa);
        assert_eq!(t.gamma, 0.2);
        let mut g = GenConfig::default();
        apply_gen(&mut g, &file).unwrap();
        assert_eq!(g.seed, 3);
        let mut s = SweepConfig::default();
        s.apply(&file).unwrap();
        assert_eq!(s.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(KvFile::parse("novalue\n").is_err());
        assert!(KvFile::parse("plain = 1\n").is_err());
        assert!(KvFile::parse("train.seed = 1\ntrain.seed = 2\n").is_err());
        let file = KvFile::parse("train.bogus = 1\n").unwrap();
        assert!(TrainConfig::default().apply(&file).is_err());
        let file = KvFile::parse("train.epochs = many\n").unwrap();
        assert!(TrainConfig::default().apply(&file).is_err());
    }

    #[test]
    fn kv_round_trip() {
        let mut t = TrainConfig::default();
        t.model.widths = vec![4, 6];
        t.model.resolution = 32;
        t.gamma = 0.25;
        let mut u = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        for (k, v) in t.to_kv() {
            u.set(k.strip_prefix("train.").unwrap(), &v).unwrap();
        }
        assert_eq!(u.cache_dir, Some(t.resolved_cache_dir()));
        u.cache_dir = t.cache_dir.clone();
        assert_eq!(u, t);
    }

    #[test]
    fn gamma_rules() {
        let base = TrainConfig::default();
        let b = TrainConfig {
            loss: LossKind::BceOnly,
            gamma: 0.7,
            ..base.clone()
        }
        .checked()
        .unwrap();
        assert_eq!(b.gamma, 0.0);
        let zero = TrainConfig {
            loss: LossKind::MtCe,
            gamma: 0.0,
            ..base.clone()
        };
        assert!(zero.checked().is_err());
        assert_eq!(base.config_id(), "mt_la@0.5");
        assert_eq!(base.baseline().config_id(), "baseline");
    }
}
