//! Run configuration read from a TOML file.

use anyhow::{bail, Context, Result};
use prince_core::bart::BartHyperparams;
use prince_core::strata::WModelData;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Environment variable that replaces the built-in default seed.
pub const SEED_ENV: &str = "PRINCE_SEED";
pub const DEFAULT_SEED: u64 = 20_190_101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateColumn {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    pub outcome: String,
    pub treatment: String,
    pub instrument: String,
    pub covariates: Vec<CovariateColumn>,
    #[serde(default)]
    pub weight: Option<String>,
    #[serde(default)]
    pub cluster: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Estimators {
    pub tsls: bool,
    /// Survey weights in both 2SLS stages.
    pub tsls_weighted: bool,
    /// Numeric covariates that get a squared term in 2SLS.
    pub tsls_squares: Vec<String>,
    pub surrogate: bool,
    /// PATE needs the transport assumptions asserted here.
    pub pate: bool,
    pub assert_transport: bool,
}

impl Default for Estimators {
    fn default() -> Self {
        Estimators {
            tsls: true,
            tsls_weighted: false,
            tsls_squares: vec!["age".into()],
            surrogate: true,
            pate: true,
            assert_transport: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    /// Total stored draws over all chains; sets the thinning interval.
    pub stored_target: usize,
    pub rho: f64,
    /// Extra fit at this correlation, reported as a sensitivity check.
    pub sensitivity_rho: Option<f64>,
    pub hyper: BartHyperparams,
    pub propensity_iterations: usize,
    pub propensity_burn_in: usize,
    pub w_model_data: WModelData,
    /// Among kept per-row surfaces, every `dense_stride`-th carries all levels (used by PATE).
    pub dense_stride: usize,
    pub pi_tolerance: f64,
    pub bootstrap_draws: usize,
    pub estimators: Estimators,
    pub columns: Option<ColumnMapping>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            chains: 18,
            iterations: 2000,
            burn_in: 500,
            stored_target: 9000,
            rho: 0.0,
            sensitivity_rho: None,
            hyper: BartHyperparams::default(),
            propensity_iterations: 1000,
            propensity_burn_in: 250,
            w_model_data: WModelData::ObservedArm,
            dense_stride: 2,
            pi_tolerance: 1e-9,
            bootstrap_draws: 200,
            estimators: Estimators::default(),
            columns: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            bail!("chains must be at least 1");
        }
        if self.burn_in >= self.iterations {
            bail!("burn_in ({}) must be below iterations ({})", self.burn_in, self.iterations);
        }
        if self.stored_target == 0 {
            bail!("stored_target must be positive");
        }
        if self.propensity_burn_in >= self.propensity_iterations {
            bail!("propensity_burn_in must be below propensity_iterations");
        }
        for rho in std::iter::once(self.rho).chain(self.sensitivity_rho) {
            if !(rho > -1.0 && rho < 1.0) {
                bail!("rho must lie in (-1, 1), got {rho}");
            }
        }
        self.hyper.validate()?;
        Ok(())
    }

    /// Thinning interval that stores about `stored_target` draws in total.
    pub fn thin(&self) -> usize {
        let kept = self.chains * (self.iterations - self.burn_in);
        (kept / self.stored_target).max(1)
    }
}

/// Seed precedence: command-line flag, then config file, then the
/// environment variable, then the built-in default.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v} is not an unsigned integer")),
        Err(_) => Ok(DEFAULT_SEED),
    }
}
