use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::css::CssConfig;
use crate::cst::{CrMode, TrainConfig};
use crate::dataset::BenchmarkConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::model::FusionMode;

/// Everything one pipeline invocation needs. Read from TOML with one table
/// per component; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory for checkpoints, logs, dumps and metrics.
    pub out: PathBuf,
    /// Dataset directory; `<out>/data` when unset.
    pub data: Option<PathBuf>,
    /// Worker cap for the thread pool; all cores when unset.
    pub threads: Option<usize>,
    pub benchmark: BenchmarkConfig,
    pub css: CssConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/default"),
            data: None,
            threads: None,
            benchmark: BenchmarkConfig::default(),
            css: CssConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub fusion: Option<FusionMode>,
    pub css: Option<bool>,
    pub cr: Option<CrMode>,
    pub delta: Option<f64>,
    pub eta: Option<f64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?, path)
    }

    /// Defaults, then the optional file, then `overrides`; validated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    /// `seed` drives data generation, initialization, sampling and the
    /// rephrasings used for evaluation.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.benchmark.seed = s;
            self.train.seed = s;
            self.eval.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(f) = o.fusion {
            self.train.fusion = f;
        }
        if let Some(c) = o.css {
            self.train.css = c;
        }
        if let Some(cr) = o.cr {
            self.train.cr_mode = cr;
        }
        if let Some(d) = o.delta {
            self.css.delta = d;
        }
        if let Some(e) = o.eta {
            self.css.eta = e;
        }
        if let Some(t) = o.threads {
            self.threads = Some(t);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.benchmark.validate()?;
        self.css.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be positive"));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out.join("model.ckpt")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invalid(format!("config serialization: {e}")))
    }
}
