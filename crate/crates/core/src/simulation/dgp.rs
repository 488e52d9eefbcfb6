//! The two data-generating settings and their true effect among the affected.

use super::base::{base_covariates, BaseRow};
use crate::error::{Error, Result};
use crate::normal::norm_cdf;
use crate::strata::{AnalysisRow, Dataset};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Parity depends on the instrument and age but has no effect on employment.
    Placebo,
    /// A shared unobserved factor raises employment and lowers parity.
    Confounded,
}

impl Setting {
    pub fn name(&self) -> &'static str {
        match self {
            Setting::Placebo => "placebo",
            Setting::Confounded => "confounded",
        }
    }
}

/// Per-row bookkeeping kept at generation time.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pub w0: Vec<u32>,
    pub w1: Vec<u32>,
    pub u: Vec<f64>,
    /// Age part of the outcome index; `None` in the placebo setting.
    pub eta: Option<Vec<f64>>,
    /// Moments used to standardize the observed count.
    pub w_mean: f64,
    pub w_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSample {
    pub setting: Setting,
    pub rows: Vec<BaseRow>,
    pub potential: Potential,
}

impl SimSample {
    pub fn dataset(&self) -> Result<Dataset> {
        let rows = self
            .rows
            .iter()
            .map(|r| AnalysisRow { y: r.y, w: r.w, z: r.z, x: r.x(), weight: 1.0, cluster: None })
            .collect();
        Dataset::new(base_covariates(), rows)
    }
}

fn quad(c: &[f64; 3], age: f64) -> f64 {
    c[0] + c[1] * age + c[2] * age * age
}

fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u32 {
    if rate > 0.0 {
        Poisson::new(rate).expect("positive rate").sample(rng) as u32
    } else {
        0
    }
}

/// Redraw parity: W(z) ~ Poisson(exp(gamma'(1, age, age^2) - U) + z), the two
/// potential counts independent given U.
fn draw_counts<R: Rng + ?Sized>(rows: &mut [BaseRow], gamma: &[f64; 3], rng: &mut R) -> Potential {
    let u: Vec<f64> = (0..rows.len()).map(|_| rng.sample(StandardNormal)).collect();
    counts_given_u(rows, gamma, u, rng)
}

fn counts_given_u<R: Rng + ?Sized>(rows: &mut [BaseRow], gamma: &[f64; 3], u: Vec<f64>, rng: &mut R) -> Potential {
    let (mut w0, mut w1) = (Vec::with_capacity(rows.len()), Vec::with_capacity(rows.len()));
    for (r, ui) in rows.iter_mut().zip(&u) {
        let lambda = (quad(gamma, r.age) - ui).exp();
        let a = poisson(lambda, rng);
        let b = poisson(lambda + 1.0, rng);
        r.w = if r.z == 1 { b } else { a };
        w0.push(a);
        w1.push(b);
    }
    Potential { w0, w1, u, eta: None, w_mean: f64::NAN, w_sd: f64::NAN }
}

pub fn gen_placebo<R: Rng + ?Sized>(base: &[BaseRow], gamma: &[f64; 3], rng: &mut R) -> SimSample {
    let mut rows = base.to_vec();
    let potential = draw_counts(&mut rows, gamma, rng);
    SimSample { setting: Setting::Placebo, rows, potential }
}

pub fn gen_confounded<R: Rng + ?Sized>(base: &[BaseRow], gamma: &[f64; 3], beta: &[f64; 3], rng: &mut R) -> Result<SimSample> {
    let mut rows = base.to_vec();
    let mut potential = draw_counts(&mut rows, gamma, rng);
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.w as f64).sum::<f64>() / n;
    let sd = (rows.iter().map(|r| (r.w as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateSimulation("simulated counts have zero variance".into()));
    }
    let eta: Vec<f64> = rows.iter().map(|r| quad(beta, r.age)).collect();
    for (i, r) in rows.iter_mut().enumerate() {
        let standardized = (r.w as f64 - mean) / sd;
        r.y = rng.gen_bool(norm_cdf(eta[i] + potential.u[i] - standardized)) as u8;
    }
    potential.eta = Some(eta);
    potential.w_mean = mean;
    potential.w_sd = sd;
    Ok(SimSample { setting: Setting::Confounded, rows, potential })
}

/// P(Y(j) = 1) - P(Y(j-1) = 1) for row `i`.
fn unit_effect(p: &Potential, eta: &[f64], i: usize, j: u32) -> f64 {
    let index = eta[i] + p.u[i];
    norm_cdf(index - (j as f64 - p.w_mean) / p.w_sd) - norm_cdf(index - (j as f64 - 1.0 - p.w_mean) / p.w_sd)
}

/// Effect of one more child among units the instrument moves from j to j-1,
/// averaged over the realized affected units. Pooling each level's mean with
/// weight equal to its share of affected units is the same as this average.
/// Outcome noise is integrated out exactly.
pub fn true_tau(p: &Potential) -> Result<f64> {
    let affected: Vec<usize> = (0..p.w0.len()).filter(|&i| p.w0[i] == p.w1[i] + 1).collect();
    if affected.is_empty() {
        return Err(Error::NoAffectedUnits);
    }
    let Some(eta) = &p.eta else {
        return Ok(0.0);
    };
    Ok(affected.iter().map(|&i| unit_effect(p, eta, i, p.w0[i])).sum::<f64>() / affected.len() as f64)
}

/// Monte Carlo version of `true_tau`: regenerate both potential outcomes of
/// each affected unit from one shared uniform, `draws` times in total.
/// Returns the estimate and its standard error.
pub fn true_tau_monte_carlo<R: Rng + ?Sized>(p: &Potential, draws: usize, rng: &mut R) -> Result<(f64, f64)> {
    let affected: Vec<usize> = (0..p.w0.len()).filter(|&i| p.w0[i] == p.w1[i] + 1).collect();
    if affected.is_empty() {
        return Err(Error::NoAffectedUnits);
    }
    let Some(eta) = &p.eta else {
        return Ok((0.0, 0.0));
    };
    let (mut s, mut q) = (0.0, 0.0);
    for d in 0..draws {
        let i = affected[d % affected.len()];
        let j = p.w0[i] as f64;
        let index = eta[i] + p.u[i];
        let v: f64 = rng.gen();
        let y_j = (v < norm_cdf(index - (j - p.w_mean) / p.w_sd)) as u8 as f64;
        let y_prev = (v < norm_cdf(index - (j - 1.0 - p.w_mean) / p.w_sd)) as u8 as f64;
        let diff = y_j - y_prev;
        s += diff;
        q += diff * diff;
    }
    let n = draws as f64;
    let mean = s / n;
    Ok((mean, ((q / n - mean * mean) / (n - 1.0)).sqrt()))
}
