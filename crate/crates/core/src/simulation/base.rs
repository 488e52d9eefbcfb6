//! Base table for the simulation studies: covariates, instrument, parity and
//! employment for a national sample of women aged 15-49. Real extracts with
//! the same columns can replace the synthetic generator.

use crate::error::{param, Result};
use crate::normal::norm_cdf;
use crate::strata::Covariate;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseRow {
    pub age: f64,
    /// 0 none, 1 primary, 2 secondary or higher.
    pub education: u32,
    /// 0 Muslim, 1 Christian, 2 other.
    pub religion: u32,
    pub urban: u32,
    pub sexual_experience: u32,
    pub z: u8,
    pub w: u32,
    pub y: u8,
}

impl BaseRow {
    /// Covariates in the order given by `base_covariates`.
    pub fn x(&self) -> Vec<f64> {
        vec![
            self.age,
            self.education as f64,
            self.religion as f64,
            self.urban as f64,
            self.sexual_experience as f64,
        ]
    }
}

pub fn base_covariates() -> Vec<Covariate> {
    let labels = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    vec![
        Covariate::numeric("age"),
        Covariate::categorical("education", labels(&["none", "primary", "secondary"])),
        Covariate::categorical("religion", labels(&["muslim", "christian", "other"])),
        Covariate::categorical("urban", labels(&["rural", "urban"])),
        Covariate::categorical("sexual_experience", labels(&["no", "yes"])),
    ]
}

/// Default size of the synthetic base table.
pub const BASE_ROWS: usize = 32_000;
/// Overall share of infecund women.
pub const Z_PREVALENCE: f64 = 0.0241;

const AGE_MIN: u32 = 15;
const AGE_MAX: u32 = 49;

/// Age pyramid: each single year is a little smaller than the one before.
fn age_weights() -> Vec<f64> {
    let w: Vec<f64> = (AGE_MIN..=AGE_MAX).map(|a| (-0.035 * (a - AGE_MIN) as f64).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Infecundity rises steeply with age; the level is set so the overall share
/// is `Z_PREVALENCE`.
fn z_rates(ages: &[f64]) -> Vec<f64> {
    let shape: Vec<f64> = (AGE_MIN..=AGE_MAX).map(|a| (0.14 * (a - AGE_MIN) as f64).exp()).collect();
    let level = Z_PREVALENCE / shape.iter().zip(ages).map(|(s, p)| s * p).sum::<f64>();
    shape.into_iter().map(|s| (level * s).min(0.5)).collect()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draw a synthetic base table of `n` rows.
pub fn generate_base(n: usize, seed: u64) -> Result<Vec<BaseRow>> {
    if n == 0 {
        return param("base table needs at least one row");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ages = age_weights();
    let z_rate = z_rates(&ages);
    let cum: Vec<f64> = ages
        .iter()
        .scan(0.0, |s, p| {
            *s += p;
            Some(*s)
        })
        .collect();
    let frailty = Gamma::new(1.2, 1.0 / 1.2).expect("valid gamma");
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen();
        let k = cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1);
        let age = (AGE_MIN as usize + k) as f64;
        // Younger cohorts are more schooled.
        let p_none = 0.06 + 0.005 * (age - 15.0);
        let p_sec = (0.62 - 0.007 * (age - 15.0)).max(0.2);
        let v: f64 = rng.gen();
        let education = if v < p_none { 0 } else if v < 1.0 - p_sec { 1 } else { 2 };
        let v: f64 = rng.gen();
        let religion = if v < 0.151 { 0 } else if v < 0.151 + 0.731 { 1 } else { 2 };
        let urban = rng.gen_bool(0.385) as u32;
        let sexual_experience = rng.gen_bool(logistic((age - 17.5) / 1.6)) as u32;
        let z = rng.gen_bool(z_rate[k]) as u8;
        let mut mean = 4.6 * logistic((age - 31.0) / 5.0);
        mean *= [1.35, 1.0, 0.7][education as usize];
        let w = if sexual_experience == 1 {
            let lambda = mean * frailty.sample(&mut rng);
            if lambda > 0.0 {
                Poisson::new(lambda).expect("positive rate").sample(&mut rng) as u32
            } else {
                0
            }
        } else {
            0
        };
        let eta = -1.0 + 1.45 * (1.0 - (-(age - 15.0) / 6.0).exp()) + 0.1 * urban as f64 + 0.15 * (education == 2) as u8 as f64;
        let y = rng.gen_bool(norm_cdf(eta)) as u8;
        rows.push(BaseRow { age, education, religion, urban, sexual_experience, z, w, y });
    }
    Ok(rows)
}
