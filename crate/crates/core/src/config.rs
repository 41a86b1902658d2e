//! Run configuration files.
//!
//! A config is TOML with a top-level `seed` and the sections `[problem]`,
//! `[problem.ic]`, `[model]`, `[train]` and `[eval]`. Every key is optional:
//! missing keys take the defaults for the equation named in
//! `problem.equation`, so a file containing only
//!
//! ```toml
//! [problem]
//! equation = "burgers"
//! ```
//!
//! is a complete Burgers setup. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::equations::{IcSettings, PdeKind, PdeSpec};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::ModelConfig;
use crate::schemes::NumericalFlux;
use crate::training::{Problem, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub equation: PdeKind,
    pub wavespeed: f64,
    pub viscosity: f64,
    pub flux: NumericalFlux,
    pub domain_length: f64,
    pub n_cells: usize,
    pub dt: f64,
    pub refine: usize,
    pub ks_pool_duration: f64,
    pub ic: IcSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub n_cases: usize,
    /// Rollout length; defaults to the training horizon.
    pub horizon: usize,
    pub bin_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub problem: ProblemSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn default_for(kind: PdeKind) -> Self {
        let p = Problem::default_for(kind);
        let train = TrainConfig::default_for(kind);
        Self {
            seed: 0,
            problem: ProblemSection {
                equation: kind,
                wavespeed: p.spec.wavespeed,
                viscosity: p.spec.viscosity,
                flux: p.spec.flux,
                domain_length: p.grid.domain_length(),
                n_cells: p.grid.n_cells(),
                dt: p.dt,
                refine: p.refine,
                ks_pool_duration: p.ks_pool_duration,
                ic: p.ic,
            },
            model: ModelConfig::default(),
            eval: EvalSection {
                n_cases: 50,
                horizon: train.horizon,
                bin_width: 0.05,
            },
            train,
        }
    }

    /// Parses a config, filling unspecified keys from the equation defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let kind = match user.get("problem").and_then(|p| p.get("equation")) {
            Some(toml::Value::String(s)) => PdeKind::parse(s).map_err(|e| Error::Config(e.to_string()))?,
            Some(_) => return Err(Error::Config("problem.equation must be a string".into())),
            None => return Err(Error::Config("problem.equation is required".into())),
        };
        let mut defaults = Self::default_for(kind);
        // the evaluation horizon follows an overridden training horizon
        let user_train_horizon = user.get("train").and_then(|t| t.get("horizon")).and_then(|h| h.as_integer());
        if let Some(h) = user_train_horizon {
            defaults.eval.horizon = usize::try_from(h).map_err(|_| Error::Config("train.horizon must be positive".into()))?;
        }
        let mut merged = toml::Table::try_from(&defaults).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn spec(&self) -> PdeSpec {
        let p = &self.problem;
        let mut spec = match p.equation {
            PdeKind::Advection => PdeSpec::advection(p.wavespeed),
            PdeKind::Burgers => PdeSpec::burgers(),
            PdeKind::KuramotoSivashinsky => PdeSpec::kuramoto_sivashinsky(p.viscosity),
        };
        spec.flux = p.flux;
        spec
    }

    pub fn problem(&self) -> Result<Problem> {
        let p = &self.problem;
        let problem = Problem {
            spec: self.spec(),
            grid: Grid::new(p.domain_length, p.n_cells).map_err(|e| Error::Config(e.to_string()))?,
            dt: p.dt,
            refine: p.refine,
            ic: p.ic.clone(),
            ks_pool_duration: p.ks_pool_duration,
        };
        problem.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.problem()?;
        self.train.validate().map_err(cfg)?;
        crate::model::LearnedScheme::new(&self.spec(), Grid::new(self.problem.domain_length, self.problem.n_cells).map_err(cfg)?, &self.model)
            .map_err(cfg)?;
        if self.eval.n_cases == 0 || self.eval.horizon == 0 {
            return Err(Error::Config("eval.n_cases and eval.horizon must be positive".into()));
        }
        if !(self.eval.bin_width > 0.0) {
            return Err(Error::Config("eval.bin_width must be positive".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
