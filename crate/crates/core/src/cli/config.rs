use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrunkSpec};
use crate::seed::sha256_hex;
use crate::train::Hyperparams;

/// Where the groups come from: an existing dataset directory or a
/// synthetic generator spec. Exactly one must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

/// One experiment, read from a TOML file.
///
/// ```toml
/// out = "runs/desk"
/// seeds = [1, 2, 3]
/// freeze_encoders = false
/// class_weights = false
/// overlay_alpha = 0.5
///
/// [data.synthetic]
/// train = 600
/// valid = 100
/// test = 100
///
/// [model]
/// trunk = "small4"
///
/// [hyperparams]
/// epochs_stage1 = 30
/// epochs_stage2 = 20
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelConfig,
    /// `hyperparams.seed` is filled in per run seed and must not be set.
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub freeze_encoders: bool,
    #[serde(default)]
    pub class_weights: bool,
    #[serde(default = "default_alpha")]
    pub overlay_alpha: f64,
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_alpha() -> f64 {
    0.5
}

impl RunConfig {
    /// Desk-scale profile on synthetic data: 600/100/100 groups and 30/20 epochs.
    pub fn desk(out: impl Into<PathBuf>, seeds: Vec<u64>) -> Self {
        RunConfig {
            data: DataSection { path: None, synthetic: Some(SyntheticSpec::desk(0)) },
            model: ModelConfig::default(),
            hyperparams: Hyperparams { epochs_stage1: 30, epochs_stage2: 20, ..Default::default() },
            out: out.into(),
            seeds,
            freeze_encoders: false,
            class_weights: false,
            overlay_alpha: default_alpha(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies `--seed` and `--out` and re-validates.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
        if let Some(o) = out {
            self.out = o;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => return Err(Error::config("data: set either `path` or `synthetic`, not both")),
            (None, None) => return Err(Error::config("data: one of `path` or `synthetic` is required")),
            (None, Some(spec)) => spec.validate().map_err(|e| prefix("data.synthetic", e))?,
            (Some(_), None) => {}
        }
        let spec = TrunkSpec::lookup(&self.model.trunk)
            .ok_or_else(|| Error::config(format!("model.trunk: unknown trunk `{}`", self.model.trunk)))?;
        spec.validate().map_err(|e| prefix("model.trunk", e))?;
        self.hyperparams.validate().map_err(|e| prefix("hyperparams", e))?;
        if self.hyperparams.seed != 0 {
            return Err(Error::config("hyperparams.seed: use the top-level `seeds` list instead"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds: at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds: duplicate seed"));
        }
        if !(0.0..=1.0).contains(&self.overlay_alpha) {
            return Err(Error::config(format!("overlay_alpha: {} outside [0,1]", self.overlay_alpha)));
        }
        Ok(())
    }

    /// Hash of everything that influences results. The output directory is
    /// left out so that a run can be moved or repeated elsewhere.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    pub fn hyperparams_for(&self, seed: u64) -> Hyperparams {
        Hyperparams { seed, ..self.hyperparams.clone() }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }
}

fn prefix(field: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::config(format!("{field}: {m}")),
        other => other,
    }
}
