//! Prior hyperparameters and their data-driven calibration.

use crate::error::{param, Result};
use crate::normal::norm_quantile;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

/// Response link of a forest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    Gaussian,
    Probit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BartHyperparams {
    /// Number of trees K.
    pub n_trees: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Degrees of freedom of the scaled inverse-chi-square prior on sigma^2.
    pub eta0: f64,
    /// Scale of the sigma^2 prior; calibrated from the data when `None`.
    pub s0_sq: Option<f64>,
    /// Leaf-scale parameter (sigma_mu = tau / K); calibrated when `None`.
    pub tau: Option<f64>,
    /// Proposals leaving a leaf with fewer training rows than this are rejected.
    pub min_leaf_size: usize,
}

impl Default for BartHyperparams {
    fn default() -> Self {
        BartHyperparams {
            n_trees: 200,
            alpha: 0.95,
            beta: 2.0,
            eta0: 3.0,
            s0_sq: None,
            tau: None,
            min_leaf_size: 1,
        }
    }
}

impl BartHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return param("n_trees must be positive");
        }
        split_prior_prob(0, self.alpha, self.beta)?;
        if !(self.eta0 > 0.0) {
            return param("eta0 must be positive");
        }
        if let Some(s) = self.s0_sq {
            if !(s > 0.0) {
                return param("s0_sq must be positive");
            }
        }
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return param("tau must be positive");
            }
        }
        Ok(())
    }
}

/// Branching-process probability that a node at `depth` splits: alpha (1 + d)^(-beta).
pub fn split_prior_prob(depth: u32, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return param(format!("alpha must lie in (0,1), got {alpha}"));
    }
    if !(beta >= 0.0) {
        return param(format!("beta must be non-negative, got {beta}"));
    }
    Ok(alpha * (1.0 + depth as f64).powf(-beta))
}

/// Scale s0^2 of the inverse-chi-square prior so that P(sigma < sample_sd) = 0.90.
///
/// With sigma^2 = eta0 s0^2 / X, X ~ chi2(eta0), the condition reads
/// eta0 s0^2 / sample_sd^2 = q, where q is the 0.10 quantile of chi2(eta0).
pub fn calibrate_s0(sample_sd: f64, eta0: f64) -> Result<f64> {
    if !(sample_sd > 0.0) || !sample_sd.is_finite() {
        return param(format!("sample_sd must be positive, got {sample_sd}"));
    }
    if !(eta0 > 0.0) || !eta0.is_finite() {
        return param(format!("eta0 must be positive, got {eta0}"));
    }
    let q = chi2_quantile(0.10, eta0);
    Ok(sample_sd * sample_sd * q / eta0)
}

/// Quantile of chi2(df) by bisection on the regularized incomplete gamma function.
pub(crate) fn chi2_quantile(p: f64, df: f64) -> f64 {
    let cdf = |x: f64| gamma_lr(df / 2.0, x / 2.0);
    let mut lo = 0.0;
    let mut hi = df.max(1.0);
    while cdf(hi) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Two-sided 95% normal quantile used for the leaf-scale calibration.
pub const PRIOR_MASS_Z: f64 = 1.959_963_984_540_054;

/// Leaf-scale parameter tau such that the prior on f(v), a sum of K independent
/// N(., (tau/K)^2) leaf draws, puts about 95% of its mass on an interval of the
/// target width. For the probit link the targets are probabilities and the
/// interval is their normal-quantile preimage.
pub fn calibrate_tau(target_lo: f64, target_hi: f64, n_trees: usize, link: Link) -> Result<f64> {
    if !(target_lo < target_hi) || !target_lo.is_finite() || !target_hi.is_finite() {
        return param(format!("degenerate target range [{target_lo}, {target_hi}]"));
    }
    if n_trees == 0 {
        return param("n_trees must be positive");
    }
    let (lo, hi) = match link {
        Link::Gaussian => (target_lo, target_hi),
        Link::Probit => {
            if !(target_lo > 0.0 && target_hi < 1.0) {
                return param("probit targets must be probabilities in (0,1)");
            }
            (norm_quantile(target_lo), norm_quantile(target_hi))
        }
    };
    let half_width = 0.5 * (hi - lo);
    // sd(f) = sqrt(K) * tau / K must equal half_width / z.
    Ok((n_trees as f64).sqrt() * half_width / PRIOR_MASS_Z)
}

/// Probit range targeted by the leaf-scale calibration for binary responses.
pub const PROBIT_TARGET: (f64, f64) = (0.001, 0.999);

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{ChiSquared, Distribution, Normal};

    #[test]
    fn split_prior_values() {
        assert_abs_diff_eq!(split_prior_prob(0, 0.95, 2.0).unwrap(), 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(split_prior_prob(1, 0.95, 2.0).unwrap(), 0.2375, epsilon = 1e-15);
        assert!(split_prior_prob(0, 0.0, 2.0).is_err());
        assert!(split_prior_prob(0, 1.0, 2.0).is_err());
        assert!(split_prior_prob(0, 0.5, -1.0).is_err());
    }

    #[test]
    fn s0_calibration_hits_ninety_percent() {
        let s0 = calibrate_s0(1.0, 3.0).unwrap();
        // chi-square quantile identity: P(X > 3 s0^2) = 0.9
        let x = 3.0 * s0;
        assert_abs_diff_eq!(gamma_lr(1.5, x / 2.0), 0.10, epsilon = 1e-10);
        // Monte Carlo over prior draws of sigma.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chi = ChiSquared::new(3.0).unwrap();
        let n = 100_000;
        let below = (0..n)
            .filter(|_| {
                let sigma2 = 3.0 * s0 / chi.sample(&mut rng);
                sigma2.sqrt() < 1.0
            })
            .count();
        assert_abs_diff_eq!(below as f64 / n as f64, 0.90, epsilon = 0.004);
    }

    #[test]
    fn s0_scale_equivariance_and_errors() {
        let a = calibrate_s0(1.3, 3.0).unwrap();
        let b = calibrate_s0(2.6, 3.0).unwrap();
        assert_abs_diff_eq!(b / a, 4.0, epsilon = 1e-12);
        assert!(calibrate_s0(0.0, 3.0).is_err());
        assert!(calibrate_s0(1.0, 0.0).is_err());
        assert!(calibrate_s0(1.0, -2.0).is_err());
    }

    #[test]
    fn probit_tau_targets_quantile_range() {
        let (lo, hi) = PROBIT_TARGET;
        assert_abs_diff_eq!(norm_quantile(lo), -3.090_232_306_167_813, epsilon = 1e-9);
        let tau = calibrate_tau(lo, hi, 200, Link::Probit).unwrap();
        let sd_f = (200f64).sqrt() * tau / 200.0;
        assert_abs_diff_eq!(sd_f * PRIOR_MASS_Z, norm_quantile(hi), epsilon = 1e-12);
    }

    #[test]
    fn gaussian_tau_prior_mass_by_simulation() {
        // Observed range [0, 10], mu0 = 5: simulate f as a sum of K leaf draws.
        let k = 50;
        let tau = calibrate_tau(0.0, 10.0, k, Link::Gaussian).unwrap();
        let sigma_mu = tau / k as f64;
        let leaf = Normal::new(5.0 / k as f64, sigma_mu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20_000;
        let inside = (0..n)
            .filter(|_| {
                let f: f64 = (0..k).map(|_| leaf.sample(&mut rng)).sum();
                (0.0..=10.0).contains(&f)
            })
            .count();
        assert_abs_diff_eq!(inside as f64 / n as f64, 0.95, epsilon = 0.006);
    }

    #[test]
    fn doubling_trees_keeps_induced_spread() {
        let t1 = calibrate_tau(0.0, 4.0, 100, Link::Gaussian).unwrap();
        let t2 = calibrate_tau(0.0, 4.0, 200, Link::Gaussian).unwrap();
        let spread = |tau: f64, k: usize| (k as f64).sqrt() * tau / k as f64;
        assert_abs_diff_eq!(spread(t1, 100), spread(t2, 200), epsilon = 1e-12);
        // The per-leaf scale shrinks as 1/sqrt(K).
        assert_abs_diff_eq!((t2 / 200.0) / (t1 / 100.0), 1.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert!(calibrate_tau(1.0, 1.0, 10, Link::Gaussian).is_err());
    }
}
