//! Repeated-sampling study: generate data from a base table, compute the true
//! effect among the affected, and score Prince BART and 2SLS against it.

pub mod base;
pub mod dgp;
mod glm;

pub use base::{base_covariates, generate_base, BaseRow, BASE_ROWS, Z_PREVALENCE};
pub use dgp::{gen_confounded, gen_placebo, true_tau, true_tau_monte_carlo, Potential, Setting, SimSample};
pub use glm::{GlmFit, MAX_NEWTON};

use crate::bart::BartHyperparams;
use crate::diagnostics::{rhat, ChainMatrix};
use crate::error::{param, Error, Result};
use crate::estimands::summarize;
use crate::strata::{fit_propensity, run_chain, ChainConfig, PropensityConfig};
use crate::tsls::{fit_2sls_dataset, CovariateSpec};
use glm::{fit_glm, Family};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How the outcome auxiliary regression is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YAuxLink {
    #[default]
    Probit,
    /// Log-linear Poisson fit of the binary outcome.
    Poisson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Auxiliary {
    pub gamma: GlmFit,
    pub beta: GlmFit,
}

/// Maximum likelihood fits of parity and employment on (1, age, age^2).
pub fn fit_auxiliary(base: &[BaseRow], y_link: YAuxLink) -> Result<Auxiliary> {
    if base.is_empty() {
        return param("empty base table");
    }
    let age: Vec<f64> = base.iter().map(|r| r.age).collect();
    let w: Vec<f64> = base.iter().map(|r| r.w as f64).collect();
    let y: Vec<f64> = base.iter().map(|r| r.y as f64).collect();
    let gamma = fit_glm(Family::Poisson, &age, &w)?;
    let family = match y_link {
        YAuxLink::Probit => Family::Probit,
        YAuxLink::Poisson => Family::Poisson,
    };
    let beta = fit_glm(family, &age, &y)?;
    Ok(Auxiliary { gamma, beta })
}

/// Estimator settings used inside each replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BartStudyConfig {
    pub chains: usize,
    pub chain: ChainConfig,
    pub propensity: PropensityConfig,
}

impl Default for BartStudyConfig {
    /// Reduced settings for repeated fits: 4 chains of 500 iterations with 50 trees.
    fn default() -> Self {
        let hyper = BartHyperparams { n_trees: 50, ..Default::default() };
        BartStudyConfig {
            chains: 4,
            chain: ChainConfig {
                iterations: 500,
                burn_in: 250,
                thin: 2,
                hyper: hyper.clone(),
                keep_surface: false,
                pi_tolerance: 1e-9,
                ..Default::default()
            },
            propensity: PropensityConfig { hyper, iterations: 600, burn_in: 200 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub setting: Setting,
    pub replications: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub y_aux: YAuxLink,
    pub bart: BartStudyConfig,
    pub tsls: CovariateSpec,
}

impl SimConfig {
    pub fn desk(setting: Setting, seed: u64) -> Self {
        SimConfig {
            setting,
            replications: 50,
            sample_size: 2000,
            seed,
            y_aux: YAuxLink::Probit,
            bart: BartStudyConfig::default(),
            tsls: CovariateSpec::with_squares(&["age"]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return param("replications must be at least 1");
        }
        if self.sample_size < 10 {
            return param("sample size must be at least 10");
        }
        if self.bart.chains < 2 {
            return param("at least two chains are needed for diagnostics");
        }
        self.bart.chain.validate()
    }
}

/// Seed of replication `r`: a SplitMix64 step away from the study seed.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    let mut z = seed.wrapping_add((r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    /// Posterior SD for Prince BART, standard error for 2SLS.
    pub sd: f64,
}

impl Estimate {
    fn covers(&self, truth: f64) -> bool {
        self.lo <= truth && truth <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub truth: f64,
    pub affected_units: usize,
    pub bart: Option<Estimate>,
    pub bart_rhat: Option<f64>,
    pub tsls: Option<Estimate>,
    pub weak_instrument: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub estimator: String,
    pub bias: f64,
    /// Population SD of the estimation errors.
    pub sd: f64,
    pub coverage: f64,
    pub rmse: f64,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub gamma: [f64; 3],
    pub beta: [f64; 3],
    pub metrics: Vec<Metrics>,
    pub replications: Vec<Replication>,
    pub failures: usize,
}

impl SimResult {
    pub fn metric(&self, estimator: &str) -> Option<&Metrics> {
        self.metrics.iter().find(|m| m.estimator == estimator)
    }
}

pub const PRINCE_BART: &str = "Prince BART";
pub const TSLS: &str = "2SLS";

/// Bias, SD, coverage and RMSE of successful replications.
pub fn score(name: &str, pairs: &[(f64, Estimate)]) -> Metrics {
    let n = pairs.len() as f64;
    if pairs.is_empty() {
        return Metrics { estimator: name.into(), bias: f64::NAN, sd: f64::NAN, coverage: f64::NAN, rmse: f64::NAN, used: 0 };
    }
    let err: Vec<f64> = pairs.iter().map(|(t, e)| e.estimate - t).collect();
    let bias = err.iter().sum::<f64>() / n;
    let sd = (err.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / n).sqrt();
    let coverage = pairs.iter().filter(|(t, e)| e.covers(*t)).count() as f64 / n;
    Metrics { estimator: name.into(), bias, sd, coverage, rmse: (bias * bias + sd * sd).sqrt(), used: pairs.len() }
}

fn run_bart(sample: &SimSample, config: &BartStudyConfig, seed: u64) -> Result<(Estimate, f64)> {
    let data = sample.dataset()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_E7A5);
    let prop = fit_propensity(&data, &config.propensity, &mut rng)?;
    let traces = (0..config.chains)
        .map(|c| run_chain(&data, &prop.e_hat, &config.chain, seed, c).map(|d| d.mate_trace()))
        .collect::<Result<Vec<_>>>()?;
    let pooled: Vec<f64> = traces.iter().flatten().copied().collect();
    let s = summarize("MATE^a", &pooled)?;
    let r = ChainMatrix::new(traces).map(|m| rhat(&m)).unwrap_or(f64::NAN);
    Ok((Estimate { estimate: s.mean, lo: s.lo, hi: s.hi, sd: s.sd }, r))
}

fn run_replication(config: &SimConfig, base: &[BaseRow], aux: &Auxiliary, r: usize) -> Replication {
    let seed = replication_seed(config.seed, r);
    let mut rec = Replication {
        index: r,
        seed,
        truth: f64::NAN,
        affected_units: 0,
        bart: None,
        bart_rhat: None,
        tsls: None,
        weak_instrument: false,
        failure: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<BaseRow> = sample(&mut rng, base.len(), config.sample_size).into_iter().map(|i| base[i].clone()).collect();
    let generated = match config.setting {
        Setting::Placebo => Ok(gen_placebo(&rows, &aux.gamma.coef, &mut rng)),
        Setting::Confounded => gen_confounded(&rows, &aux.gamma.coef, &aux.beta.coef, &mut rng),
    };
    let outcome = generated.and_then(|s| {
        rec.truth = true_tau(&s.potential)?;
        rec.affected_units = s.potential.w0.iter().zip(&s.potential.w1).filter(|(a, b)| **a == **b + 1).count();
        let t = fit_2sls_dataset(&s.dataset()?, &config.tsls, false)?;
        rec.tsls = Some(Estimate { estimate: t.estimate, lo: t.lo, hi: t.hi, sd: t.se });
        rec.weak_instrument = t.weak_instrument;
        let (b, rh) = run_bart(&s, &config.bart, seed)?;
        rec.bart = Some(b);
        rec.bart_rhat = Some(rh);
        Ok(())
    });
    if let Err(e) = outcome {
        rec.failure = Some(e.to_string());
    }
    rec
}

/// Run every replication (in parallel, each with its own derived seed) and
/// score both estimators. A replication where either estimator fails is
/// excluded from both and counted in `failures`.
pub fn run_study(config: &SimConfig, base: &[BaseRow]) -> Result<SimResult> {
    config.validate()?;
    if base.len() < config.sample_size {
        return param(format!("base table has {} rows, fewer than the sample size {}", base.len(), config.sample_size));
    }
    let aux = fit_auxiliary(base, config.y_aux)?;
    let replications: Vec<Replication> =
        (0..config.replications).into_par_iter().map(|r| run_replication(config, base, &aux, r)).collect();
    let ok: Vec<&Replication> = replications.iter().filter(|r| r.failure.is_none()).collect();
    let failures = replications.len() - ok.len();
    if ok.is_empty() {
        return Err(Error::DegenerateSimulation(format!("all {failures} replications failed")));
    }
    let pairs = |f: fn(&Replication) -> &Option<Estimate>| -> Vec<(f64, Estimate)> {
        ok.iter().map(|r| (r.truth, f(r).clone().expect("successful replication"))).collect()
    };
    let metrics = vec![score(PRINCE_BART, &pairs(|r| &r.bart)), score(TSLS, &pairs(|r| &r.tsls))];
    Ok(SimResult { config: config.clone(), gamma: aux.gamma.coef, beta: aux.beta.coef, metrics, replications, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rmse_decomposition_is_exact() {
        let pairs: Vec<(f64, Estimate)> = (0..7)
            .map(|i| {
                let e = 0.1 * (i as f64).sin();
                (-0.05 + 0.01 * i as f64, Estimate { estimate: e, lo: e - 0.1, hi: e + 0.1, sd: 0.05 })
            })
            .collect();
        let m = score("x", &pairs);
        assert_abs_diff_eq!(m.rmse * m.rmse, m.bias * m.bias + m.sd * m.sd, epsilon = 1e-10);
        let direct = (pairs.iter().map(|(t, e)| (e.estimate - t).powi(2)).sum::<f64>() / 7.0).sqrt();
        assert_abs_diff_eq!(m.rmse, direct, epsilon = 1e-12);
    }

    #[test]
    fn auxiliary_fits_have_three_coefficients_and_sensible_signs() {
        let base = generate_base(BASE_ROWS, 1).unwrap();
        let aux = fit_auxiliary(&base, YAuxLink::Probit).unwrap();
        assert_eq!(aux.gamma.coef.len(), 3);
        // Parity rises over most of the age range.
        let rate = |a: f64| aux.gamma.coef[0] + aux.gamma.coef[1] * a + aux.gamma.coef[2] * a * a;
        assert!(rate(40.0) > rate(20.0));
        let pois = fit_auxiliary(&base, YAuxLink::Poisson).unwrap();
        assert!(pois.beta.coef != aux.beta.coef);
        let flat: Vec<BaseRow> = base.iter().take(100).map(|r| BaseRow { age: 30.0, ..r.clone() }).collect();
        assert!(matches!(fit_auxiliary(&flat, YAuxLink::Probit), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn replication_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|r| replication_seed(7, r)).collect();
        assert_eq!(s.len(), 1000);
    }

    fn tiny(setting: Setting) -> SimConfig {
        let mut c = SimConfig::desk(setting, 3);
        c.replications = 2;
        c.sample_size = 400;
        c.bart.chains = 2;
        c.bart.chain.iterations = 60;
        c.bart.chain.burn_in = 20;
        c.bart.chain.hyper.n_trees = 10;
        c.bart.propensity.iterations = 60;
        c.bart.propensity.burn_in = 20;
        c.bart.propensity.hyper.n_trees = 10;
        c
    }

    #[test]
    fn small_study_is_reproducible_and_well_formed() {
        let base = generate_base(5000, 2).unwrap();
        let a = run_study(&tiny(Setting::Confounded), &base).unwrap();
        let b = run_study(&tiny(Setting::Confounded), &base).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replications.len(), 2);
        for r in &a.replications {
            assert!(r.truth < 0.0);
            let e = r.bart.as_ref().unwrap();
            assert!(e.lo <= e.estimate && e.estimate <= e.hi);
        }
        let m = a.metric(PRINCE_BART).unwrap();
        assert_eq!(m.used + a.failures, 2);
        let p = run_study(&tiny(Setting::Placebo), &base).unwrap();
        assert!(p.replications.iter().all(|r| r.truth == 0.0));
    }

    #[test]
    fn failed_replications_are_counted() {
        let mut base = generate_base(2000, 4).unwrap();
        // Nobody exposed: the propensity and 2SLS fits both fail.
        base.iter_mut().for_each(|r| r.z = 0);
        let err = run_study(&tiny(Setting::Placebo), &base).unwrap_err();
        assert!(matches!(err, Error::DegenerateSimulation(ref m) if m.contains("2 replications")));
    }
}
