//! The `fit` pipeline: propensity, chains, estimands, surrogate tree and 2SLS.

use crate::archive::Archive;
use crate::config::RunConfig;
use crate::load::LoadReport;
use anyhow::{Context, Result};
use prince_core::estimands::{heterogeneity_range, mcate_draws, parity_weights, pate_draws, CateSurface};
use prince_core::strata::{fit_propensity, run_chains, ChainConfig, ChainDraws, ChainFlags, Dataset, PropensityConfig};
use prince_core::surrogate::{extract_subgroups, fit_surrogate, ShallowTree, SurrogateColumns};
use prince_core::tsls::{fit_2sls_dataset, CovariateSpec, TslsFit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Number of per-row surface draws kept over all chains.
pub const SURFACE_DRAWS: usize = 200;

const PROPENSITY_STREAM: u64 = 0x7072_6f70;
const BOOTSTRAP_STREAM: u64 = 0x626f_6f74;
const SENSITIVITY_STREAM: u64 = 0x7365_6e73;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupResult {
    pub label: String,
    pub rows: usize,
    pub affected_mass: f64,
}

/// Everything besides the draws that the reports need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResults {
    pub seed: u64,
    pub config: RunConfig,
    pub thin: usize,
    pub surface_stride: usize,
    pub big_j: u32,
    pub rows: usize,
    pub load: Option<LoadReport>,
    pub tsls: Option<TslsFit>,
    pub tsls_error: Option<String>,
    pub pate_error: Option<String>,
    pub surrogate: Option<ShallowTree>,
    pub surrogate_text: Option<String>,
    pub subgroups: Vec<SubgroupResult>,
    pub heterogeneity_error: Option<String>,
    pub fixed_largest: Option<usize>,
    pub fixed_smallest: Option<usize>,
    pub flags: Vec<ChainFlags>,
}

fn chain_config(c: &RunConfig, rho: f64, keep_surface: bool) -> (ChainConfig, usize) {
    let thin = c.thin();
    let stored_total = c.chains * (c.iterations - c.burn_in).div_ceil(thin);
    let stride = (stored_total / SURFACE_DRAWS).max(1);
    let cc = ChainConfig {
        iterations: c.iterations,
        burn_in: c.burn_in,
        thin,
        rho,
        hyper: c.hyper.clone(),
        w_model_data: c.w_model_data,
        keep_surface,
        surface_stride: stride,
        dense_stride: c.dense_stride,
        keep_imputations: false,
        pi_tolerance: c.pi_tolerance,
    };
    (cc, stride)
}

/// Stack per-chain vectors into a [chains, draws, width] block.
fn stack(draws: &[ChainDraws], width: usize, f: impl Fn(&prince_core::strata::DrawSummary) -> Vec<f64>) -> (Vec<usize>, Vec<f64>) {
    let s = draws[0].summaries.len();
    let data: Vec<f64> = draws.iter().flat_map(|d| d.summaries.iter().flat_map(&f)).collect();
    let shape = if width == 1 { vec![draws.len(), s] } else { vec![draws.len(), s, width] };
    (shape, data)
}

/// Posterior-mean CATE among the affected and expected affected mass per row.
fn row_targets(surface: &CateSurface) -> (Vec<f64>, Vec<f64>) {
    let n = surface.n_rows();
    let d = surface.draws.len() as f64;
    let mut target = vec![0.0; n];
    let mut used = vec![0usize; n];
    let mut mass = vec![0.0; n];
    for draw in &surface.draws {
        for i in 0..n {
            let (m, c) = draw.row_mixed(i);
            mass[i] += m / d;
            if let Some(c) = c {
                target[i] += c;
                used[i] += 1;
            }
        }
    }
    for i in 0..n {
        if used[i] > 0 {
            target[i] /= used[i] as f64;
        }
    }
    (target, mass)
}

pub fn run_fit(data: &Dataset, config: &RunConfig, seed: u64, load: Option<LoadReport>) -> Result<(Archive, FitResults)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PROPENSITY_STREAM);
    let prop_config = PropensityConfig {
        hyper: config.hyper.clone(),
        iterations: config.propensity_iterations,
        burn_in: config.propensity_burn_in,
    };
    let prop = fit_propensity(data, &prop_config, &mut rng).context("propensity model")?;
    let (cc, stride) = chain_config(config, config.rho, true);
    let draws = run_chains(data, &prop.e_hat, &cc, seed, config.chains).context("principal-strata chains")?;
    let big_j = data.big_j()?;
    let mut archive = Archive::new();
    let (shape, v) = stack(&draws, 1, |s| vec![s.mate]);
    archive.add("mate", shape, v)?;
    let (shape, v) = stack(&draws, big_j as usize, |s| s.level_num.clone());
    archive.add("level_num", shape, v)?;
    let (shape, v) = stack(&draws, big_j as usize, |s| s.level_den.clone());
    archive.add("level_den", shape, v)?;
    let (shape, v) = stack(&draws, 2, |s| s.sigma_w.to_vec());
    archive.add("sigma_w", shape, v)?;

    if let Some(rho) = config.sensitivity_rho {
        let (sc, _) = chain_config(config, rho, false);
        let sens = run_chains(data, &prop.e_hat, &sc, seed ^ SENSITIVITY_STREAM, config.chains).context("sensitivity chains")?;
        let (shape, v) = stack(&sens, 1, |s| vec![s.mate]);
        archive.add("mate_sensitivity", shape, v)?;
    }

    let surface = CateSurface { big_j, draws: draws.iter().flat_map(|d| d.surfaces.iter().cloned()).collect() };
    let mut results = FitResults {
        seed,
        config: config.clone(),
        thin: cc.thin,
        surface_stride: stride,
        big_j,
        rows: data.n_rows(),
        load,
        tsls: None,
        tsls_error: None,
        pate_error: None,
        surrogate: None,
        surrogate_text: None,
        subgroups: Vec::new(),
        heterogeneity_error: None,
        fixed_largest: None,
        fixed_smallest: None,
        flags: draws.iter().map(|d| d.flags.clone()).collect(),
    };

    if config.estimators.pate {
        let clusters: Vec<Option<u64>> =
            data.rows.iter().enumerate().map(|(i, r)| Some(r.cluster.unwrap_or(i as u64))).collect();
        let sw: Vec<f64> = data.rows.iter().map(|r| r.weight).collect();
        let w: Vec<u32> = data.rows.iter().map(|r| r.w).collect();
        let mut brng = ChaCha8Rng::seed_from_u64(seed ^ BOOTSTRAP_STREAM);
        let out = parity_weights(&w, &sw, big_j).and_then(|pw| {
            pate_draws(&surface, &clusters, &sw, &pw, config.bootstrap_draws, config.estimators.assert_transport, &mut brng)
        });
        match out {
            Ok(v) => archive.add("pate", vec![v.len()], v)?,
            Err(e) => results.pate_error = Some(e.to_string()),
        }
    }

    if config.estimators.surrogate {
        let (target, mass) = row_targets(&surface);
        let x: Vec<Vec<f64>> = data.rows.iter().map(|r| r.x.clone()).collect();
        let cols = SurrogateColumns {
            names: data.covariates.iter().map(|c| c.name.clone()).collect(),
            kinds: data.covariates.iter().map(|c| c.kind).collect(),
            labels: data.covariates.iter().map(|c| c.labels.clone()).collect(),
        };
        let tree = fit_surrogate(&x, &cols, &target, &mass)?;
        let subgroups = extract_subgroups(&tree);
        let members: Vec<Vec<bool>> = subgroups.iter().map(|s| s.members(&x)).collect();
        let mut mcate = Vec::new();
        for (s, m) in subgroups.iter().zip(&members) {
            results.subgroups.push(SubgroupResult {
                label: s.label(),
                rows: m.iter().filter(|&&b| b).count(),
                affected_mass: m.iter().zip(&mass).filter(|(b, _)| **b).map(|(_, v)| v).sum(),
            });
            match mcate_draws(&surface, m, None) {
                Ok(v) => mcate.extend(v),
                Err(e) => {
                    results.heterogeneity_error = Some(format!("{}: {e}", s.label()));
                    break;
                }
            }
        }
        if results.heterogeneity_error.is_none() {
            archive.add("mcate", vec![subgroups.len(), surface.draws.len()], mcate)?;
            if subgroups.len() >= 2 {
                match heterogeneity_range(&surface, &members) {
                    Ok(h) => {
                        let per_draw: Vec<f64> = (0..surface.draws.len())
                            .map(|d| {
                                let vals = (0..subgroups.len()).map(|g| archive.get("mcate").unwrap().1[g * surface.draws.len() + d]);
                                let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                                hi - lo
                            })
                            .collect();
                        archive.add("d_fixed", vec![h.fixed_draws.len()], h.fixed_draws.clone())?;
                        archive.add("d_per_draw", vec![per_draw.len()], per_draw)?;
                        results.fixed_largest = Some(h.fixed_largest);
                        results.fixed_smallest = Some(h.fixed_smallest);
                    }
                    Err(e) => results.heterogeneity_error = Some(e.to_string()),
                }
            }
        }
        results.surrogate_text = Some(tree.describe());
        results.surrogate = Some(tree);
    }

    if config.estimators.tsls {
        let spec = CovariateSpec { squares: config.estimators.tsls_squares.clone(), exclude: Vec::new() };
        match fit_2sls_dataset(data, &spec, config.estimators.tsls_weighted) {
            Ok(t) => results.tsls = Some(t),
            Err(e) => results.tsls_error = Some(e.to_string()),
        }
    }
    Ok((archive, results))
}
