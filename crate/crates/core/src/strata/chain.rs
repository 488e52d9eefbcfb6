//! Data-augmentation sampler over principal strata: one backfitting sweep per
//! forest per iteration, then a Bayes-rule re-imputation of each unit's
//! counterfactual count.

use super::{completed_pair, init_imputation, outcome_log_lik, posterior_strata_prob, Dataset, JointCounts, Marginal, Stratum};
use crate::bart::{
    calibrate_s0, calibrate_tau, probit_latent_one, BartHyperparams, BartSampler, Design, FeatureKind,
    FeatureSpace, Forest, LeafPrior, Link, PROBIT_TARGET,
};
use crate::count_model::latent_unchecked;
use crate::error::{param, Error, Result};
use crate::estimands::{cate_affected, DrawSurface};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which rows inform each arm's count model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WModelData {
    /// Only rows observed under that arm.
    #[default]
    ObservedArm,
    /// Observed rows plus the current imputed counterfactuals of the other arm.
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Latent correlation between the two potential counts.
    pub rho: f64,
    pub hyper: BartHyperparams,
    pub w_model_data: WModelData,
    /// Keep the per-row CATE surface of every `surface_stride`-th stored draw.
    pub keep_surface: bool,
    pub surface_stride: usize,
    /// Among kept surfaces, every `dense_stride`-th also carries all levels
    /// densely (0 disables).
    pub dense_stride: usize,
    pub keep_imputations: bool,
    /// Affected-stratum probabilities below this are dropped from surfaces.
    pub pi_tolerance: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 2000,
            burn_in: 500,
            thin: 3,
            rho: 0.0,
            hyper: BartHyperparams::default(),
            w_model_data: WModelData::ObservedArm,
            keep_surface: true,
            surface_stride: 10,
            dense_stride: 5,
            keep_imputations: false,
            pi_tolerance: 1e-12,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.iterations <= self.burn_in {
            return param("iterations must exceed burn-in");
        }
        if self.thin == 0 || self.surface_stride == 0 {
            return param("thinning and surface stride must be positive");
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return param(format!("rho must lie in (-1, 1), got {}", self.rho));
        }
        if !(self.pi_tolerance >= 0.0) {
            return param("pi_tolerance must be non-negative");
        }
        Ok(())
    }

    pub fn n_stored(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Scalar quantities of one stored draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawSummary {
    /// MATE among the affected over the sample.
    pub mate: f64,
    /// Per parity level 1..=J: sum of pi * CATE and sum of pi.
    pub level_num: Vec<f64>,
    pub level_den: Vec<f64>,
    pub sigma_w: [f64; 2],
}

/// Numerical fallbacks taken during a chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainFlags {
    pub bayes_underflow: u64,
    pub prior_underflow: u64,
    pub latent_fallback: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub chain: usize,
    pub seed: u64,
    pub summaries: Vec<DrawSummary>,
    pub surfaces: Vec<DrawSurface>,
    pub imputations: Vec<Vec<u32>>,
    pub flags: ChainFlags,
}

impl ChainDraws {
    pub fn mate_trace(&self) -> Vec<f64> {
        self.summaries.iter().map(|s| s.mate).collect()
    }
}

/// Mutable state of one chain.
pub struct ChainState {
    big_j: u32,
    y: Vec<u8>,
    z: Vec<u8>,
    w: Vec<u32>,
    imputed: Vec<u32>,
    /// Number of (x, e_hat) columns; w0 and w1 follow in the outcome design.
    p: usize,
    w_design: Design,
    y_design: Design,
    y_models: [BartSampler; 2],
    w_models: [BartSampler; 2],
    y_latent: [Vec<f64>; 2],
    w_latent: [Vec<f64>; 2],
    rho: f64,
    mode: WModelData,
    flags: ChainFlags,
}

fn arm_mask(z: &[u8], arm: u8) -> Vec<bool> {
    z.iter().map(|&v| v == arm).collect()
}

fn mean_sd(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

impl ChainState {
    /// Set up forests at their prior centers and draw initial imputations.
    pub fn new<R: Rng + ?Sized>(data: &Dataset, e_hat: &[f64], config: &ChainConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let n = data.n_rows();
        if e_hat.len() != n {
            return Err(Error::Shape { expected: n, got: e_hat.len() });
        }
        if n == 0 {
            return param("empty analysis sample");
        }
        let big_j = data.big_j()?;
        let y: Vec<u8> = data.rows.iter().map(|r| r.y).collect();
        let z = data.z_values();
        let w: Vec<u32> = data.rows.iter().map(|r| r.w).collect();
        for arm in 0..2u8 {
            if !z.contains(&arm) {
                return Err(Error::DegenerateInstrument(1 - arm));
            }
        }
        let imputed: Vec<u32> = z.iter().zip(&w).map(|(&zi, &wi)| init_imputation(zi, wi, big_j, rng)).collect();

        let mut cols = data.covariate_columns();
        cols.push(e_hat.to_vec());
        let p = cols.len();
        let mut kinds = data.covariate_kinds();
        kinds.push(FeatureKind::numeric_from_values(e_hat));
        let w_design = Design::from_columns(cols.clone())?;
        let w_space = FeatureSpace::new(kinds.clone());
        let mut y_cols = cols;
        let pairs: Vec<Stratum> = (0..n).map(|i| completed_pair(z[i], w[i], imputed[i])).collect();
        y_cols.push(pairs.iter().map(|s| s.w0 as f64).collect());
        y_cols.push(pairs.iter().map(|s| s.w1 as f64).collect());
        let y_design = Design::from_columns(y_cols)?;
        kinds.push(FeatureKind::count(big_j));
        kinds.push(FeatureKind::count(big_j));
        let y_space = FeatureSpace::new(kinds);

        let hyper = &config.hyper;
        let k = hyper.n_trees;
        let y_tau = match hyper.tau {
            Some(t) => t,
            None => calibrate_tau(PROBIT_TARGET.0, PROBIT_TARGET.1, k, Link::Probit)?,
        };
        let make_y = |arm: u8| -> Result<BartSampler> {
            let prior = LeafPrior { mu0: 0.0, sigma_mu: y_tau / k as f64 };
            let forest = Forest::stumps(k, p + 2, 1.0, prior);
            let mut s = BartSampler::new(forest, y_space.clone(), &y_design, hyper, Link::Probit, 1.0)?;
            s.set_active(arm_mask(&z, arm))?;
            Ok(s)
        };
        let y_models = [make_y(0)?, make_y(1)?];

        let wf = || w.iter().map(|&v| v as f64);
        let (w_mean, w_sd) = mean_sd(wf());
        let w_sd = if w_sd > 0.0 { w_sd } else { 1.0 };
        let (w_min, w_max) = (wf().fold(f64::INFINITY, f64::min), wf().fold(f64::NEG_INFINITY, f64::max));
        let (lo, hi) = if w_max > w_min { (w_min, w_max) } else { (w_min - 0.5, w_min + 0.5) };
        let w_tau = match hyper.tau {
            Some(t) => t,
            None => calibrate_tau(lo, hi, k, Link::Gaussian)?,
        };
        let s0_sq = match hyper.s0_sq {
            Some(s) => s,
            None => calibrate_s0(w_sd, hyper.eta0)?,
        };
        let make_w = |arm: u8| -> Result<BartSampler> {
            let prior = LeafPrior { mu0: w_mean, sigma_mu: w_tau / k as f64 };
            let forest = Forest::stumps(k, p, w_sd, prior);
            let mut s = BartSampler::new(forest, w_space.clone(), &w_design, hyper, Link::Gaussian, s0_sq)?;
            if config.w_model_data == WModelData::ObservedArm {
                s.set_active(arm_mask(&z, arm))?;
            }
            Ok(s)
        };
        let w_models = [make_w(0)?, make_w(1)?];
        let w_latent0: Vec<f64> = w.iter().map(|&v| v as f64 - 0.5).collect();

        Ok(ChainState {
            big_j,
            y,
            z,
            w,
            imputed,
            p,
            w_design,
            y_design,
            y_models,
            w_models,
            y_latent: [vec![0.0; n], vec![0.0; n]],
            w_latent: [w_latent0.clone(), w_latent0],
            rho: config.rho,
            mode: config.w_model_data,
            flags: ChainFlags::default(),
        })
    }

    pub fn big_j(&self) -> u32 {
        self.big_j
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn imputed(&self) -> &[u32] {
        &self.imputed
    }

    pub fn flags(&self) -> &ChainFlags {
        &self.flags
    }

    /// Current (W(0), W(1)) of row `i`.
    pub fn pair(&self, i: usize) -> Stratum {
        completed_pair(self.z[i], self.w[i], self.imputed[i])
    }

    pub fn outcome_forest(&self, arm: usize) -> &Forest {
        self.y_models[arm].forest()
    }

    pub fn count_forest(&self, arm: usize) -> &Forest {
        self.w_models[arm].forest()
    }

    /// Predictor vector (x, e_hat) of row `i`.
    pub fn profile(&self, i: usize) -> Vec<f64> {
        self.w_design.row(i)
    }

    fn count_of(&self, arm: usize, i: usize) -> u32 {
        let s = self.pair(i);
        if arm == 0 {
            s.w0
        } else {
            s.w1
        }
    }

    /// One sweep of each outcome and count forest.
    pub fn update_models<R: Rng + ?Sized>(&mut self, iteration: usize, rng: &mut R) -> Result<()> {
        for arm in 0..2 {
            let fit = self.y_models[arm].fit();
            let lat = &mut self.y_latent[arm];
            for i in 0..fit.len() {
                if self.z[i] as usize == arm {
                    lat[i] = probit_latent_one(self.y[i], fit[i], rng);
                }
            }
            self.y_models[arm].sweep(&self.y_design, &self.y_latent[arm], rng)?;
        }
        for arm in 0..2 {
            let sigma = self.w_models[arm].sigma();
            for i in 0..self.n_rows() {
                if self.mode == WModelData::Completed || self.z[i] as usize == arm {
                    let mean = self.w_models[arm].fit()[i];
                    let (v, flag) = latent_unchecked(self.count_of(arm, i), mean, sigma, self.big_j, rng);
                    self.flags.latent_fallback += flag as u64;
                    self.w_latent[arm][i] = v;
                }
            }
            self.w_models[arm].sweep(&self.w_design, &self.w_latent[arm], rng)?;
        }
        for m in self.y_models.iter().chain(&self.w_models) {
            if let Some(row) = m.fit().iter().position(|f| !f.is_finite()) {
                return Err(Error::NonFinite { iteration, row });
            }
        }
        if !self.w_models.iter().all(|m| m.sigma().is_finite() && m.sigma() > 0.0) {
            return Err(Error::NonFinite { iteration, row: 0 });
        }
        Ok(())
    }

    fn joint(&self, i: usize) -> JointCounts {
        let m = |arm: usize| Marginal { mean: self.w_models[arm].fit()[i], sigma: self.w_models[arm].sigma() };
        JointCounts { arms: [m(0), m(1)], big_j: self.big_j, rho: self.rho }
    }

    /// Column of the imputed count for a row observed under `z`.
    fn imputed_col(&self, z: u8) -> usize {
        if z == 1 {
            self.p
        } else {
            self.p + 1
        }
    }

    fn row_posterior(&self, i: usize, mask: &[Vec<bool>; 2], iteration: usize) -> Result<(Vec<Stratum>, Vec<f64>, bool, bool)> {
        let (z, w) = (self.z[i], self.w[i]);
        let (strata, prior, prior_flag) = self.joint(i).feasible_prior(z, w)?;
        let col = self.imputed_col(z);
        let model = &self.y_models[z as usize];
        let mut ll = Vec::with_capacity(strata.len());
        for s in &strata {
            let v = if z == 1 { s.w0 } else { s.w1 };
            let f = model.predict_override(&self.y_design, i, &[(col, v as f64)], &mask[z as usize]);
            let l = outcome_log_lik(self.y[i], f);
            if l.is_nan() {
                return Err(Error::NonFinite { iteration, row: i });
            }
            ll.push(l);
        }
        let (post, flag) = posterior_strata_prob(&prior, &ll)?;
        Ok((strata, post, flag, prior_flag))
    }

    fn imputed_masks(&self) -> [Vec<bool>; 2] {
        // Arm z only ever varies the column of the count it did not reveal.
        [self.y_models[0].trees_using(&[self.p + 1]), self.y_models[1].trees_using(&[self.p])]
    }

    /// Bayes-rule strata update for every row, without drawing: feasible
    /// strata and their posterior probabilities under the current forests.
    pub fn strata_posteriors(&self) -> Result<Vec<(Vec<Stratum>, Vec<f64>)>> {
        let mask = self.imputed_masks();
        (0..self.n_rows()).map(|i| self.row_posterior(i, &mask, 0).map(|(s, p, _, _)| (s, p))).collect()
    }

    /// Multinomial re-imputation of every counterfactual.
    pub fn impute<R: Rng + ?Sized>(&mut self, iteration: usize, rng: &mut R) -> Result<()> {
        let mask = self.imputed_masks();
        let refresh = [
            self.y_models[0].trees_using(&[self.p, self.p + 1]),
            self.y_models[1].trees_using(&[self.p, self.p + 1]),
        ];
        for i in 0..self.n_rows() {
            let (strata, post, flag, prior_flag) = self.row_posterior(i, &mask, iteration)?;
            self.flags.bayes_underflow += flag as u64;
            self.flags.prior_underflow += prior_flag as u64;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = strata.len() - 1;
            for (k, p) in post.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            let s = strata[pick];
            let z = self.z[i];
            let v = if z == 1 { s.w0 } else { s.w1 };
            if v != self.imputed[i] {
                self.imputed[i] = v;
                self.y_design.set(i, self.imputed_col(z), v as f64);
                for arm in 0..2 {
                    self.y_models[arm].refresh_row(&self.y_design, i, &refresh[arm]);
                }
            }
        }
        Ok(())
    }

    /// Affected-stratum probabilities and CATEs per row at the current state.
    /// Returns the summary and, when requested, the sparse surface (with
    /// dense values if `dense` is set).
    pub fn surface(&self, keep: bool, dense: bool, tol: f64) -> (DrawSummary, Option<DrawSurface>) {
        let big_j = self.big_j;
        let levels = big_j as usize;
        let masks = [
            self.y_models[0].trees_using(&[self.p, self.p + 1]),
            self.y_models[1].trees_using(&[self.p, self.p + 1]),
        ];
        let mut num = vec![0.0; levels];
        let mut den = vec![0.0; levels];
        let mut out = keep.then(DrawSurface::new);
        let mut dense_vals = (keep && dense).then(|| Vec::with_capacity(self.n_rows() * levels));
        for i in 0..self.n_rows() {
            let joint = self.joint(i);
            let mass = joint.monotone_mass();
            for j in 1..=big_j {
                // A cell never exceeds either marginal, so skip rectangles that cannot pass.
                let bound = joint.marginal(0, j).min(joint.marginal(1, j - 1));
                let pi = if mass > 0.0 && bound > tol * mass { joint.cell(j, j - 1) / mass } else { 0.0 };
                let wanted = pi > tol;
                if !wanted && dense_vals.is_none() {
                    continue;
                }
                let over = [(self.p, j as f64), (self.p + 1, (j - 1) as f64)];
                let f0 = self.y_models[0].predict_override(&self.y_design, i, &over, &masks[0]);
                let f1 = self.y_models[1].predict_override(&self.y_design, i, &over, &masks[1]);
                let cate = cate_affected(f0, f1);
                if let Some(d) = dense_vals.as_mut() {
                    d.push(cate as f32);
                }
                if wanted {
                    num[j as usize - 1] += pi * cate;
                    den[j as usize - 1] += pi;
                    if let Some(s) = out.as_mut() {
                        s.push(j, cate, pi);
                    }
                }
            }
            if let Some(s) = out.as_mut() {
                s.end_row();
            }
        }
        if let (Some(s), Some(d)) = (out.as_mut(), dense_vals) {
            s.dense = Some(d);
        }
        let total: f64 = den.iter().sum();
        let mate = if total > 0.0 { num.iter().sum::<f64>() / total } else { f64::NAN };
        let summary = DrawSummary {
            mate,
            level_num: num,
            level_den: den,
            sigma_w: [self.w_models[0].sigma(), self.w_models[1].sigma()],
        };
        (summary, out)
    }
}

/// Run one chain on `data` with a frozen propensity column.
pub fn run_chain(data: &Dataset, e_hat: &[f64], config: &ChainConfig, seed: u64, chain: usize) -> Result<ChainDraws> {
    let chain_seed = seed.wrapping_add(chain as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(chain_seed);
    let mut state = ChainState::new(data, e_hat, config, &mut rng)?;
    let mut draws = ChainDraws {
        chain,
        seed: chain_seed,
        summaries: Vec::with_capacity(config.n_stored()),
        surfaces: Vec::new(),
        imputations: Vec::new(),
        flags: ChainFlags::default(),
    };
    for it in 0..config.iterations {
        state.update_models(it, &mut rng)?;
        state.impute(it, &mut rng)?;
        if it >= config.burn_in && (it - config.burn_in) % config.thin == 0 {
            let stored = draws.summaries.len();
            let keep = config.keep_surface && stored % config.surface_stride == 0;
            let kept = stored / config.surface_stride;
            let dense = config.dense_stride > 0 && kept % config.dense_stride == 0;
            let (summary, surface) = state.surface(keep, dense, config.pi_tolerance);
            if !summary.mate.is_finite() {
                return Err(Error::NoAffectedUnits);
            }
            draws.summaries.push(summary);
            if let Some(s) = surface {
                draws.surfaces.push(s);
            }
            if config.keep_imputations {
                draws.imputations.push(state.imputed().to_vec());
            }
        }
    }
    draws.flags = state.flags.clone();
    Ok(draws)
}

/// Independent chains in parallel; chain `c` is seeded with `seed + c`.
pub fn run_chains(data: &Dataset, e_hat: &[f64], config: &ChainConfig, seed: u64, n_chains: usize) -> Result<Vec<ChainDraws>> {
    (0..n_chains).into_par_iter().map(|c| run_chain(data, e_hat, config, seed, c)).collect()
}
