//! Multi-chain convergence diagnostics: rank-normalized split R-hat and
//! bulk effective sample size.

use crate::error::{param, Result};
use crate::normal::norm_quantile;
use serde::{Deserialize, Serialize};

/// Draws of one scalar, one inner vector per chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainMatrix {
    chains: Vec<Vec<f64>>,
}

impl ChainMatrix {
    pub fn new(chains: Vec<Vec<f64>>) -> Result<Self> {
        if chains.len() < 2 {
            return param("need at least two chains");
        }
        let n = chains[0].len();
        if n < 4 {
            return param("need at least four draws per chain");
        }
        if chains.iter().any(|c| c.len() != n) {
            return param("chains differ in length");
        }
        if chains.iter().flatten().any(|v| !v.is_finite()) {
            return param("non-finite draw");
        }
        Ok(ChainMatrix { chains })
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.len() * self.chains[0].len()
    }

    /// Each chain cut into two halves (a middle draw of an odd chain is dropped).
    fn split(&self) -> Vec<Vec<f64>> {
        let half = self.chains[0].len() / 2;
        let n = self.chains[0].len();
        self.chains.iter().flat_map(|c| [c[..half].to_vec(), c[n - half..].to_vec()]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub rhat: f64,
    pub ess: f64,
    /// Every draw equal; rhat is reported as 1 and ess as the draw count.
    pub degenerate: bool,
}

/// Monitoring threshold used in reports.
pub const RHAT_THRESHOLD: f64 = 1.03;

/// Normal scores of pooled average ranks.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = flat.len();
    let mut idx: Vec<usize> = (0..s).collect();
    idx.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]));
    let mut rank = vec![0.0; s];
    let mut k = 0;
    while k < s {
        let mut e = k;
        while e + 1 < s && flat[idx[e + 1]] == flat[idx[k]] {
            e += 1;
        }
        let r = 0.5 * (k + e) as f64 + 1.0;
        for &i in &idx[k..=e] {
            rank[i] = r;
        }
        k = e + 1;
    }
    let z: Vec<f64> = rank.iter().map(|r| norm_quantile((r - 0.375) / (s as f64 + 0.25))).collect();
    let n = chains[0].len();
    z.chunks(n).map(|c| c.to_vec()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n * var(&means);
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Autocovariances at lags 0.. computed on demand, biased (divide by n).
fn autocov(c: &[f64], lag: usize) -> f64 {
    let m = mean(c);
    let n = c.len();
    (0..n - lag).map(|t| (c[t] - m) * (c[t + lag] - m)).sum::<f64>() / n as f64
}

fn basic_ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let total = m * nf;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    let var_plus = (nf - 1.0) / nf * w + var(&means);
    if !(var_plus > 0.0) {
        return total;
    }
    let rho = |lag: usize| -> f64 {
        let acov = mean(&chains.iter().map(|c| autocov(c, lag)).collect::<Vec<_>>());
        if lag == 0 {
            1.0
        } else {
            1.0 - (w - acov) / var_plus
        }
    };
    // Geyer initial monotone sequence over pairs of lags.
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let p = rho(t) + rho(t + 1);
        if p < 0.0 {
            break;
        }
        let p = p.min(prev);
        sum += p;
        prev = p;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / total.log10());
    total / tau
}

fn is_constant(m: &ChainMatrix) -> bool {
    let first = m.chains[0][0];
    m.chains.iter().flatten().all(|&v| v == first)
}

/// Rank-normalized split R-hat: the larger of the bulk and folded-tail values.
/// Constant input gives 1.
pub fn rhat(m: &ChainMatrix) -> f64 {
    if is_constant(m) {
        return 1.0;
    }
    let split = m.split();
    let bulk = basic_rhat(&rank_normalize(&split));
    let mut sorted: Vec<f64> = split.iter().flatten().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let med = crate::estimands::quantile_sorted(&sorted, 0.5);
    let folded: Vec<Vec<f64>> = split.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let tail = basic_rhat(&rank_normalize(&folded));
    // Sampling noise can push the ratio just under 1; report it as 1.
    bulk.max(tail).max(1.0)
}

/// Bulk effective sample size of the rank-normalized split chains.
/// Constant input gives the draw count.
pub fn ess(m: &ChainMatrix) -> f64 {
    if is_constant(m) {
        return m.n_draws() as f64;
    }
    basic_ess(&rank_normalize(&m.split()))
}

pub fn diagnose(m: &ChainMatrix) -> Diagnostic {
    Diagnostic { rhat: rhat(m), ess: ess(m), degenerate: is_constant(m) }
}
