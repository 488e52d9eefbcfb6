//! Principal strata of the count treatment under monotonicity, their prior
//! probabilities from the two arms' count models, and the Bayes-rule update.

mod chain;
mod propensity;

pub use chain::{run_chain, run_chains, ChainConfig, ChainDraws, ChainFlags, ChainState, DrawSummary, WModelData};
pub use propensity::{fit_propensity, PropensityConfig, PropensityModel};

use crate::bart::{Design, FeatureKind};
use crate::count_model::{determine_j, pmf_unchecked, thresholds};
use crate::error::{param, Error, Result};
use crate::normal::{bvn_cdf, bvn_rectangle, norm_cdf};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateKind {
    Numeric,
    /// Integer codes `0..levels`.
    Categorical { levels: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub kind: CovariateKind,
    /// Level names for categorical covariates, indexed by code.
    #[serde(default)]
    pub labels: Vec<String>,
}

impl Covariate {
    pub fn numeric(name: impl Into<String>) -> Self {
        Covariate { name: name.into(), kind: CovariateKind::Numeric, labels: Vec::new() }
    }

    pub fn categorical(name: impl Into<String>, labels: Vec<String>) -> Self {
        let levels = labels.len() as u32;
        Covariate { name: name.into(), kind: CovariateKind::Categorical { levels }, labels }
    }
}

/// One respondent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub y: u8,
    pub w: u32,
    pub z: u8,
    pub x: Vec<f64>,
    pub weight: f64,
    pub cluster: Option<u64>,
}

/// Validated analysis sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub covariates: Vec<Covariate>,
    pub rows: Vec<AnalysisRow>,
}

impl Dataset {
    pub fn new(covariates: Vec<Covariate>, rows: Vec<AnalysisRow>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.x.len() != covariates.len() {
                return Err(Error::Shape { expected: covariates.len(), got: r.x.len() });
            }
            if r.y > 1 || r.z > 1 {
                return param(format!("row {i}: outcome and instrument must be 0 or 1"));
            }
            if !(r.weight > 0.0) || !r.weight.is_finite() {
                return param(format!("row {i}: survey weight must be positive"));
            }
            for (c, (&v, cov)) in r.x.iter().zip(&covariates).enumerate() {
                let ok = match cov.kind {
                    CovariateKind::Numeric => v.is_finite(),
                    CovariateKind::Categorical { levels } => v >= 0.0 && v.fract() == 0.0 && v < levels as f64,
                };
                if !ok {
                    return param(format!("row {i}: invalid value {v} for covariate `{}` (column {c})", cov.name));
                }
            }
        }
        Ok(Dataset { covariates, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Upper count bound J from the observed maximum.
    pub fn big_j(&self) -> Result<u32> {
        let max = self.rows.iter().map(|r| r.w).max().unwrap_or(0);
        determine_j(max as i64)
    }

    pub fn covariate_columns(&self) -> Vec<Vec<f64>> {
        (0..self.covariates.len()).map(|c| self.rows.iter().map(|r| r.x[c]).collect()).collect()
    }

    pub fn covariate_design(&self) -> Result<Design> {
        Design::from_columns(self.covariate_columns())
    }

    /// Split grids for the covariates.
    pub fn covariate_kinds(&self) -> Vec<FeatureKind> {
        self.covariates
            .iter()
            .enumerate()
            .map(|(c, cov)| match cov.kind {
                CovariateKind::Numeric => {
                    let col: Vec<f64> = self.rows.iter().map(|r| r.x[c]).collect();
                    FeatureKind::numeric_from_values(&col)
                }
                CovariateKind::Categorical { levels } => FeatureKind::categorical(levels),
            })
            .collect()
    }

    pub fn z_values(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.z).collect()
    }
}

/// Potential counts (W(0), W(1)).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stratum {
    pub w0: u32,
    pub w1: u32,
}

/// Strata compatible with observing count `w` under instrument `z`.
pub fn enumerate_strata(z: u8, w: u32, big_j: u32) -> Result<Vec<Stratum>> {
    if w > big_j {
        return param(format!("count {w} outside 0..={big_j}"));
    }
    match z {
        1 => Ok((w..=big_j).map(|w0| Stratum { w0, w1: w }).collect()),
        0 => Ok((0..=w).map(|w1| Stratum { w0: w, w1 }).collect()),
        _ => param(format!("instrument must be 0 or 1, got {z}")),
    }
}

/// Probabilities below this are dropped from sums whose total is of order one.
const NEGLIGIBLE: f64 = 1e-17;

/// Latent-Gaussian marginal of one arm's count at a covariate profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub mean: f64,
    pub sigma: f64,
}

/// Joint law of (W(0), W(1)) at one covariate profile: two rounded latent
/// Gaussians joined by a Gaussian copula with correlation `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointCounts {
    pub arms: [Marginal; 2],
    pub big_j: u32,
    pub rho: f64,
}

impl JointCounts {
    pub fn new(m0: Marginal, m1: Marginal, big_j: u32, rho: f64) -> Result<Self> {
        if !(rho > -1.0 && rho < 1.0) {
            return param(format!("rho must lie in (-1, 1), got {rho}"));
        }
        if !(m0.sigma > 0.0 && m1.sigma > 0.0) {
            return param("count-model scales must be positive");
        }
        Ok(JointCounts { arms: [m0, m1], big_j, rho })
    }

    fn std_cell(&self, arm: usize, j: u32) -> (f64, f64) {
        let (lo, hi) = thresholds(j, self.big_j);
        let m = self.arms[arm];
        ((lo - m.mean) / m.sigma, (hi - m.mean) / m.sigma)
    }

    /// Marginal P(W(arm) = j).
    pub fn marginal(&self, arm: usize, j: u32) -> f64 {
        let m = self.arms[arm];
        pmf_unchecked(j, m.mean, m.sigma, self.big_j)
    }

    /// P(W(0) = w0, W(1) = w1), before any monotonicity restriction.
    pub fn cell(&self, w0: u32, w1: u32) -> f64 {
        if self.rho == 0.0 {
            return self.marginal(0, w0) * self.marginal(1, w1);
        }
        let (a0, b0) = self.std_cell(0, w0);
        let (a1, b1) = self.std_cell(1, w1);
        bvn_rectangle(a0, b0, a1, b1, self.rho)
    }

    /// P(W(0) >= W(1)).
    pub fn monotone_mass(&self) -> f64 {
        let mut total = 0.0;
        for w1 in 0..=self.big_j {
            let p1 = self.marginal(1, w1);
            if p1 < NEGLIGIBLE {
                continue;
            }
            let (a0, _) = self.std_cell(0, w1);
            let lower = norm_cdf(a0);
            if self.rho == 0.0 || lower < NEGLIGIBLE {
                total += p1 * (1.0 - lower);
            } else {
                // P(W(1) = w1) minus the part with W*(0) below the cell of w1.
                let (a1, b1) = self.std_cell(1, w1);
                let below = bvn_cdf(a0, b1, self.rho) - bvn_cdf(a0, a1, self.rho);
                total += (p1 - below).max(0.0);
            }
        }
        total
    }

    /// Cells along one arm with the other arm's count held at `fixed`:
    /// P(W(vary) = k, W(other) = fixed) for k in `lo..=hi`.
    fn strip(&self, vary: usize, fixed: u32, lo: u32, hi: u32) -> Vec<f64> {
        let (f_lo, f_hi) = self.std_cell(1 - vary, fixed);
        // G(t) = P(W*(vary) < t, W*(other) in the fixed cell); symmetric in argument order.
        let g = |t: f64| (bvn_cdf(t, f_hi, self.rho) - bvn_cdf(t, f_lo, self.rho)).max(0.0);
        let mut prev = g(self.std_cell(vary, lo).0);
        (lo..=hi)
            .map(|k| {
                let next = g(self.std_cell(vary, k).1);
                let cell = (next - prev).max(0.0);
                prev = next;
                cell
            })
            .collect()
    }

    /// Prior probabilities over `enumerate_strata(z, w)`, renormalized over that
    /// set. Falls back to uniform (flag set) when every cell underflows.
    pub fn feasible_prior(&self, z: u8, w: u32) -> Result<(Vec<Stratum>, Vec<f64>, bool)> {
        let strata = enumerate_strata(z, w, self.big_j)?;
        let raw: Vec<f64> = if self.rho == 0.0 {
            // The observed arm's factor is common to all feasible strata.
            strata
                .iter()
                .map(|s| if z == 0 { self.marginal(1, s.w1) } else { self.marginal(0, s.w0) })
                .collect()
        } else if z == 1 {
            self.strip(0, w, w, self.big_j)
        } else {
            self.strip(1, w, 0, w)
        };
        let (p, flag) = normalize_or_uniform(raw);
        Ok((strata, p, flag))
    }
}

fn normalize_or_uniform(mut v: Vec<f64>) -> (Vec<f64>, bool) {
    let total: f64 = v.iter().sum();
    if total > 0.0 && total.is_finite() {
        v.iter_mut().for_each(|p| *p /= total);
        (v, false)
    } else {
        let n = v.len() as f64;
        v.iter_mut().for_each(|p| *p = 1.0 / n);
        (v, true)
    }
}

/// Prior probability of `stratum` for a unit observed at (z, w), with
/// independent potential counts given covariates.
pub fn strata_prob(stratum: Stratum, z: u8, w: u32, m0: Marginal, m1: Marginal, big_j: u32) -> Result<f64> {
    strata_prob_correlated(stratum, z, w, m0, m1, big_j, 0.0)
}

/// As `strata_prob`, with latent potential counts correlated at `rho`.
pub fn strata_prob_correlated(
    stratum: Stratum,
    z: u8,
    w: u32,
    m0: Marginal,
    m1: Marginal,
    big_j: u32,
    rho: f64,
) -> Result<f64> {
    let joint = JointCounts::new(m0, m1, big_j, rho)?;
    let (strata, p, _) = joint.feasible_prior(z, w)?;
    match strata.iter().position(|s| *s == stratum) {
        Some(i) => Ok(p[i]),
        None => Ok(0.0),
    }
}

/// Log-likelihood of a binary outcome given its latent probit mean.
#[inline]
pub fn outcome_log_lik(y: u8, f: f64) -> f64 {
    if y == 1 {
        norm_cdf(f).ln()
    } else {
        norm_cdf(-f).ln()
    }
}

/// Bayes rule over feasible strata in log space. Returns the posterior and
/// whether it fell back to uniform because every term underflowed.
pub fn posterior_strata_prob(prior: &[f64], log_lik: &[f64]) -> Result<(Vec<f64>, bool)> {
    if prior.len() != log_lik.len() {
        return Err(Error::Shape { expected: prior.len(), got: log_lik.len() });
    }
    if prior.is_empty() {
        return param("no feasible strata");
    }
    let logs: Vec<f64> = prior.iter().zip(log_lik).map(|(p, l)| p.ln() + l).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Ok(normalize_or_uniform(vec![0.0; prior.len()]));
    }
    let post: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    Ok(normalize_or_uniform(post))
}

/// Initial counterfactual count: W(0) = min(J, w + D) for z = 1 rows and
/// W(1) = max(0, w - D) for z = 0 rows, with D ~ Poisson(3).
pub fn init_imputation<R: Rng + ?Sized>(z: u8, w: u32, big_j: u32, rng: &mut R) -> u32 {
    let d = Poisson::new(3.0).unwrap().sample(rng) as u32;
    init_imputation_with(z, w, big_j, d)
}

pub fn init_imputation_with(z: u8, w: u32, big_j: u32, d: u32) -> u32 {
    if z == 1 {
        (w + d).min(big_j)
    } else {
        w.saturating_sub(d)
    }
}

/// (W(0), W(1)) of a unit given its observed arm and imputed counterfactual.
#[inline]
pub fn completed_pair(z: u8, w: u32, imputed: u32) -> Stratum {
    if z == 1 {
        Stratum { w0: imputed, w1: w }
    } else {
        Stratum { w0: w, w1: imputed }
    }
}
