//! `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key must be known; a typo
//! is an error rather than a silently ignored setting.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use gpn_core::baselines::{GkdeConfig, LpConfig};
use gpn_core::eval::{BaselineKind, OodKind, ShiftKind, SplitRatios, SyntheticConfig, DEFAULT_SHIFT_LEVELS};
use gpn_core::model::GpnConfig;
use gpn_core::training::TrainConfig;

#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

const KNOWN: &[&str] = &[
    // model
    "hidden_dim",
    "latent_dim",
    "num_layers",
    "dropout",
    "use_bias",
    "n_radial",
    "teleport",
    "iterations",
    "normalization",
    "budget",
    "prior",
    // training
    "learning_rate",
    "weight_decay",
    "warmup_epochs",
    "max_epochs",
    "patience",
    "entropy_weight",
    // split and experiments
    "train_ratio",
    "val_ratio",
    "test_ratio",
    "seeds",
    "kind",
    "fraction",
    "left_out",
    "shift",
    "levels",
    "baseline",
    "sigma",
    "lp_teleport",
    "lp_iterations",
    // synthetic data
    "nodes_per_class",
    "num_classes",
    "feature_dim",
    "homophily",
    "separation",
    "noise_std",
    "avg_degree",
];

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
            let k = k.trim();
            if !KNOWN.contains(&k) {
                bail!("line {}: unknown key `{k}`", i + 1);
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                bail!("line {}: duplicate key `{k}`", i + 1);
            }
        }
        Ok(Settings { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Settings::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Settings::parse(&text).with_context(|| format!("in {}", p.display()))
            }
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("`{key} = {v}`: {e}")))
            .transpose()
    }

    fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(raw) = self.values.get(key) else { return Ok(None) };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|e| anyhow!("`{key}` entry `{s}`: {e}")))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn model(&self, input_dim: usize, num_classes: usize) -> Result<GpnConfig> {
        let mut c = GpnConfig::new(input_dim, num_classes);
        self.set("hidden_dim", &mut c.hidden_dim)?;
        self.set("latent_dim", &mut c.latent_dim)?;
        self.set("num_layers", &mut c.num_layers)?;
        self.set("dropout", &mut c.dropout)?;
        self.set("use_bias", &mut c.use_bias)?;
        self.set("n_radial", &mut c.n_radial)?;
        self.set("teleport", &mut c.teleport)?;
        self.set("iterations", &mut c.iterations)?;
        self.set("normalization", &mut c.normalization)?;
        self.set("budget", &mut c.budget)?;
        self.set("prior", &mut c.prior)?;
        Ok(c)
    }

    pub fn training(&self, seed: u64) -> Result<TrainConfig> {
        let mut c = TrainConfig { seed, ..TrainConfig::default() };
        self.set("learning_rate", &mut c.learning_rate)?;
        self.set("weight_decay", &mut c.weight_decay)?;
        self.set("warmup_epochs", &mut c.warmup_epochs)?;
        self.set("max_epochs", &mut c.max_epochs)?;
        self.set("patience", &mut c.patience)?;
        self.set("entropy_weight", &mut c.loss.entropy_weight)?;
        Ok(c)
    }

    pub fn ratios(&self) -> Result<SplitRatios> {
        let mut r = SplitRatios::default();
        self.set("train_ratio", &mut r.train)?;
        self.set("val_ratio", &mut r.val)?;
        self.set("test_ratio", &mut r.test)?;
        Ok(r)
    }

    pub fn seeds(&self, fallback: u64) -> Result<Vec<u64>> {
        Ok(self.list("seeds")?.unwrap_or_else(|| vec![fallback]))
    }

    pub fn left_out(&self) -> Result<Vec<usize>> {
        Ok(self.list("left_out")?.unwrap_or_default())
    }

    pub fn ood_kind(&self) -> Result<OodKind> {
        Ok(self.get("kind")?.unwrap_or(OodKind::FeatureNormal))
    }

    pub fn fraction(&self) -> Result<f64> {
        Ok(self.get("fraction")?.unwrap_or(0.1))
    }

    pub fn shift_kind(&self) -> Result<ShiftKind> {
        Ok(self.get("shift")?.unwrap_or(ShiftKind::FeatureNormal))
    }

    pub fn levels(&self) -> Result<Vec<f64>> {
        Ok(self.list("levels")?.unwrap_or_else(|| DEFAULT_SHIFT_LEVELS.to_vec()))
    }

    pub fn baseline(&self) -> Result<(BaselineKind, GkdeConfig, LpConfig)> {
        let kind = match self.values.get("baseline").map(String::as_str) {
            None | Some("gkde") => BaselineKind::Gkde,
            Some("lp") => BaselineKind::Lp,
            Some(other) => bail!("unknown baseline `{other}` (expected gkde or lp)"),
        };
        let mut g = GkdeConfig::default();
        self.set("sigma", &mut g.sigma)?;
        let mut l = LpConfig::default();
        self.set("lp_teleport", &mut l.teleport)?;
        self.set("lp_iterations", &mut l.iterations)?;
        Ok((kind, g, l))
    }

    pub fn synthetic(&self, seed: u64) -> Result<SyntheticConfig> {
        let mut c = SyntheticConfig::new(200, 4, 32, 0.8, seed);
        self.set("nodes_per_class", &mut c.nodes_per_class)?;
        self.set("num_classes", &mut c.num_classes)?;
        self.set("feature_dim", &mut c.feature_dim)?;
        self.set("homophily", &mut c.homophily)?;
        self.set("separation", &mut c.separation)?;
        self.set("noise_std", &mut c.noise_std)?;
        self.set("avg_degree", &mut c.avg_degree)?;
        Ok(c)
    }
}
