//! Instrument propensity e(x) = P(Z = 1 | X = x) from a probit forest.

use super::Dataset;
use crate::bart::{
    calibrate_tau, probit_latent_update, BartHyperparams, BartSampler, FeatureSpace, Forest, LeafPrior, Link,
    PROBIT_TARGET,
};
use crate::error::{param, Error, Result};
use crate::normal::{norm_cdf, norm_quantile};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityConfig {
    pub hyper: BartHyperparams,
    pub iterations: usize,
    pub burn_in: usize,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        PropensityConfig { hyper: BartHyperparams::default(), iterations: 1000, burn_in: 250 }
    }
}

/// Fitted propensity: the last forest draw and the posterior-mean e_hat per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    pub forest: Forest,
    pub e_hat: Vec<f64>,
}

/// e_hat is kept strictly inside (0, 1) so it never sits on a boundary.
const E_CLAMP: f64 = 1e-6;

pub fn fit_propensity<R: Rng + ?Sized>(data: &Dataset, config: &PropensityConfig, rng: &mut R) -> Result<PropensityModel> {
    if config.iterations <= config.burn_in {
        return param("propensity iterations must exceed burn-in");
    }
    let z = data.z_values();
    let n = z.len();
    let ones = z.iter().filter(|&&v| v == 1).count();
    if ones == 0 {
        return Err(Error::DegenerateInstrument(0));
    }
    if ones == n {
        return Err(Error::DegenerateInstrument(1));
    }
    let design = data.covariate_design()?;
    let space = FeatureSpace::new(data.covariate_kinds());
    let k = config.hyper.n_trees;
    let tau = match config.hyper.tau {
        Some(t) => t,
        None => calibrate_tau(PROBIT_TARGET.0, PROBIT_TARGET.1, k, Link::Probit)?,
    };
    let center = norm_quantile(ones as f64 / n as f64);
    let forest = Forest::stumps(k, space.len(), 1.0, LeafPrior { mu0: center, sigma_mu: tau / k as f64 });
    let mut sampler = BartSampler::new(forest, space, &design, &config.hyper, Link::Probit, 1.0)?;
    let mut sum = vec![0.0; n];
    for it in 0..config.iterations {
        let latent = probit_latent_update(&z, sampler.fit(), rng)?;
        sampler.sweep(&design, &latent, rng)?;
        if it >= config.burn_in {
            for (s, f) in sum.iter_mut().zip(sampler.fit()) {
                *s += norm_cdf(*f);
            }
        }
    }
    let kept = (config.iterations - config.burn_in) as f64;
    let e_hat = sum.iter().map(|s| (s / kept).clamp(E_CLAMP, 1.0 - E_CLAMP)).collect();
    Ok(PropensityModel { forest: sampler.forest().clone(), e_hat })
}
