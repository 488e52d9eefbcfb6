//! Rounded latent-Gaussian model for bounded counts.
//!
//! A count W in `0..=J` is the cell of a latent W* ~ N(mean, sigma^2) under the
//! thresholds a_0 = -inf, a_j = j - 1 (j = 1..J), a_{J+1} = +inf.

use crate::bart::Forest;
use crate::error::{param, Result};
use crate::normal::{interval_prob, sample_truncated_std};
use rand::Rng;

/// Upper count bound: the observed maximum plus three.
pub fn determine_j(observed_max: i64) -> Result<u32> {
    if observed_max < 0 {
        return param(format!("observed maximum must be non-negative, got {observed_max}"));
    }
    u32::try_from(observed_max + 3).or_else(|_| param("observed maximum too large"))
}

/// Latent interval `[a_j, a_{j+1})` of count `j`.
#[inline]
pub fn thresholds(j: u32, big_j: u32) -> (f64, f64) {
    let lo = if j == 0 { f64::NEG_INFINITY } else { j as f64 - 1.0 };
    let hi = if j >= big_j { f64::INFINITY } else { j as f64 };
    (lo, hi)
}

/// P(W = j) when W* ~ N(mean, sigma^2).
pub fn count_pmf(j: u32, mean: f64, sigma: f64, big_j: u32) -> Result<f64> {
    if j > big_j {
        return param(format!("count {j} outside 0..={big_j}"));
    }
    if !(sigma > 0.0) {
        return param(format!("sigma must be positive, got {sigma}"));
    }
    Ok(pmf_unchecked(j, mean, sigma, big_j))
}

#[inline]
pub(crate) fn pmf_unchecked(j: u32, mean: f64, sigma: f64, big_j: u32) -> f64 {
    let (lo, hi) = thresholds(j, big_j);
    interval_prob((lo - mean) / sigma, (hi - mean) / sigma)
}

/// Full PMF over `0..=J`.
pub fn count_pmf_vec(mean: f64, sigma: f64, big_j: u32) -> Result<Vec<f64>> {
    (0..=big_j).map(|j| count_pmf(j, mean, sigma, big_j)).collect()
}

/// Count whose latent interval contains `w_star`.
#[inline]
pub fn round_latent(w_star: f64, big_j: u32) -> u32 {
    if w_star < 0.0 {
        0
    } else {
        let j = w_star.floor() + 1.0;
        if j >= big_j as f64 {
            big_j
        } else {
            j as u32
        }
    }
}

/// Draw W* ~ N(mean, sigma^2) truncated to the latent interval of count `j`.
pub fn latent_given_count<R: Rng + ?Sized>(j: u32, mean: f64, sigma: f64, big_j: u32, rng: &mut R) -> Result<f64> {
    latent_given_count_flagged(j, mean, sigma, big_j, rng).map(|(w, _)| w)
}

/// As `latent_given_count`, also reporting whether the interval mass underflowed
/// and a fallback point inside the interval was returned.
pub fn latent_given_count_flagged<R: Rng + ?Sized>(
    j: u32,
    mean: f64,
    sigma: f64,
    big_j: u32,
    rng: &mut R,
) -> Result<(f64, bool)> {
    if j > big_j {
        return param(format!("count {j} outside 0..={big_j}"));
    }
    if !(sigma > 0.0) {
        return param(format!("sigma must be positive, got {sigma}"));
    }
    Ok(latent_unchecked(j, mean, sigma, big_j, rng))
}

#[inline]
pub(crate) fn latent_unchecked<R: Rng + ?Sized>(j: u32, mean: f64, sigma: f64, big_j: u32, rng: &mut R) -> (f64, bool) {
    let (lo, hi) = thresholds(j, big_j);
    let (z, flag) = sample_truncated_std((lo - mean) / sigma, (hi - mean) / sigma, rng);
    let w = mean + sigma * z;
    // Undo rounding drift from the affine map so the draw stays in its cell.
    let w = if w < lo {
        lo
    } else if w >= hi {
        hi.next_down()
    } else {
        w
    };
    (w, flag)
}

/// A fitted count model: latent-mean forest, latent scale and upper bound.
#[derive(Debug, Clone, PartialEq)]
pub struct CountModel {
    pub forest: Forest,
    pub sigma_w: f64,
    pub big_j: u32,
}

impl CountModel {
    pub fn pmf_at(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mean = crate::bart::forest_predict(&self.forest, v)?;
        count_pmf_vec(mean, self.sigma_w, self.big_j)
    }
}
