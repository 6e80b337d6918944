//! Run configuration read from a TOML file.
//!
//! ```toml
//! [market]
//! mu0 = 0.1
//! sigma = 0.15
//! r = 0.02
//! alpha = 1.0      # or s0_minus = ...
//! epsilon = 0.3    # or s0_plus = ...
//!
//! [law]
//! kind = "finite_q"
//! beta = [0.1, 0.1, 0.2, 0.2, 0.2, 0.1, 0.1]
//!
//! [sim]
//! dt = 0.001
//! horizon = 10.0
//!
//! [experiment]
//! paths = 2000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{derive_params, LawSpec, MarketInputs, ModelParams};
use crate::montecarlo::{ExperimentConfig, SweepParam};
use crate::simulator::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketSection,
    pub law: LawSpec,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub validation: ValidationSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Market inputs. The support and breakout levels are given either as prices
/// (`s0_minus`, `s0_plus`) or as log-scale distances (`alpha`, `epsilon`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub mu0: f64,
    pub sigma: f64,
    pub r: f64,
    #[serde(default = "one")]
    pub s0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0_minus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0_plus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl MarketSection {
    pub fn inputs(&self) -> Result<MarketInputs> {
        let s0_minus = match (self.s0_minus, self.alpha) {
            (Some(level), None) => level,
            (None, Some(a)) => self.s0 * (-self.sigma * a).exp(),
            _ => {
                return Err(Error::InvalidInputs(
                    "give exactly one of market.s0_minus and market.alpha".into(),
                ))
            }
        };
        let s0_plus = match (self.s0_plus, self.epsilon) {
            (Some(level), None) => level,
            (None, Some(e)) => self.s0 * (self.sigma * e).exp(),
            _ => {
                return Err(Error::InvalidInputs(
                    "give exactly one of market.s0_plus and market.epsilon".into(),
                ))
            }
        };
        Ok(MarketInputs {
            mu0: self.mu0,
            sigma: self.sigma,
            r: self.r,
            s0: self.s0,
            s0_minus,
            s0_plus,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guard: Option<f64>,
    pub max_reject: u32,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            dt: d.dt,
            horizon: d.horizon,
            guard: d.guard,
            max_reject: d.max_reject,
        }
    }
}

impl SimSection {
    pub fn to_sim(self, seed: u64) -> SimConfig {
        SimConfig {
            dt: self.dt,
            horizon: self.horizon,
            guard: self.guard,
            max_reject: self.max_reject,
            seed,
            path_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub paths: u64,
    pub w0: f64,
    /// Required downcrossings for `simulate`; drawn under `Q` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_forced: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            paths: 2000,
            w0: 1.0,
            n_forced: None,
            sweep: None,
        }
    }
}

/// Sizes of the statistical checks run by `validate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSection {
    pub pn_paths: u64,
    pub pn_max: usize,
    /// Time cap for the unconditioned paths of the `P(A_n)` check.
    pub pn_horizon: f64,
    pub htransform_samples: usize,
    /// Time step of the law check. Finer than the default grid because both
    /// samples detect crossings at grid points only.
    pub htransform_dt: f64,
    /// Time cap for the conditioned first-downcrossing durations.
    pub htransform_horizon: f64,
    pub martingale_n: usize,
    pub martingale_paths: u64,
    pub martingale_times: Vec<f64>,
    pub optimality_delta: f64,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self {
            pn_paths: 100_000,
            pn_max: 2,
            pn_horizon: 200.0,
            htransform_samples: 10_000,
            htransform_dt: 2.5e-4,
            htransform_horizon: 50.0,
            martingale_n: 2,
            martingale_paths: 100_000,
            martingale_times: vec![0.5, 1.0, 2.0],
            optimality_delta: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Significant digits of every number written.
    pub precision: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            precision: 6,
        }
    }
}

/// Failure to obtain a usable configuration.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(#[from] Error),
}

impl RunConfig {
    pub fn load(path: &Path) -> std::result::Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.into(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every value that can be checked without running anything.
    pub fn validate(&self) -> Result<()> {
        let params = self.params()?;
        self.law.resolve(params.p)?;
        self.sim.to_sim(0).validate(&params)?;
        let e = &self.experiment;
        if e.paths < 2 {
            return Err(Error::InvalidExperiment(format!(
                "experiment.paths = {} must be >= 2",
                e.paths
            )));
        }
        if !(e.w0 > 0.0 && e.w0.is_finite()) {
            return Err(Error::InvalidExperiment(format!(
                "experiment.w0 = {} must be > 0",
                e.w0
            )));
        }
        if let Some(s) = &e.sweep {
            if s.values.is_empty() {
                return Err(Error::InvalidExperiment(
                    "experiment.sweep.values is empty".into(),
                ));
            }
        }
        let v = &self.validation;
        if v.htransform_samples < 1000 || v.pn_max < 1 || v.pn_paths < 2 || v.martingale_paths < 2 {
            return Err(Error::InvalidExperiment(
                "validation sizes too small".into(),
            ));
        }
        if !(v.htransform_dt > 0.0 && v.htransform_dt.is_finite()) {
            return Err(Error::InvalidExperiment(
                "validation.htransform_dt must be > 0".into(),
            ));
        }
        if !(v.optimality_delta > 0.0) {
            return Err(Error::InvalidExperiment(
                "validation.optimality_delta must be > 0".into(),
            ));
        }
        if !(1..=17).contains(&self.output.precision) {
            return Err(Error::InvalidExperiment(
                "output.precision must be in 1..=17".into(),
            ));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams> {
        derive_params(self.market.inputs()?)
    }

    pub fn experiment(&self, seed: u64) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            inputs: self.market.inputs()?,
            law: self.law.clone(),
            sim: self.sim.to_sim(seed),
            n_paths: self.experiment.paths,
            w0: self.experiment.w0,
        })
    }
}
