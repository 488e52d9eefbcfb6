//! Causal summaries over posterior draws of the affected-stratum CATE surface.

use crate::error::{param, Error, Result};
use crate::normal::norm_cdf;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Posterior mean and equal-tailed 90% interval of a scalar estimand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub name: String,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    /// Posterior standard deviation.
    pub sd: f64,
    pub n_draws: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let i = h.floor() as usize;
    if i + 1 >= n {
        return sorted[n - 1];
    }
    sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
}

/// Summarize draws by their mean and 5th/95th percentiles.
pub fn summarize(name: impl Into<String>, draws: &[f64]) -> Result<EffectSummary> {
    if draws.is_empty() {
        return param("cannot summarize an empty set of draws");
    }
    if let Some(i) = draws.iter().position(|d| !d.is_finite()) {
        return param(format!("draw {i} is not finite"));
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Interpolated quantiles can undershoot the mean by rounding on constant input.
    let lo = quantile_sorted(&sorted, 0.05).min(mean);
    let hi = quantile_sorted(&sorted, 0.95).max(mean);
    Ok(EffectSummary { name: name.into(), mean, lo, hi, sd: var.sqrt(), n_draws: draws.len() })
}

/// CATE among units moved from j to j-1 children, from the two arms' latent
/// outcome predictions at (w0 = j, w1 = j - 1).
#[inline]
pub fn cate_affected(f0: f64, f1: f64) -> f64 {
    norm_cdf(f0) - norm_cdf(f1)
}

/// CATE at parity `j` for the predictor profile `v` = (x, e_hat); the counts
/// (j, j - 1) are appended before evaluating each arm's outcome forest.
pub fn cate_affected_at(
    y0: &crate::bart::Forest,
    y1: &crate::bart::Forest,
    v: &[f64],
    j: u32,
    big_j: u32,
) -> Result<f64> {
    if j == 0 || j > big_j {
        return param(format!("parity {j} outside 1..={big_j}"));
    }
    let mut full = v.to_vec();
    full.extend([j as f64, (j - 1) as f64]);
    let f0 = crate::bart::forest_predict(y0, &full)?;
    let f1 = crate::bart::forest_predict(y1, &full)?;
    Ok(cate_affected(f0, f1))
}

/// One posterior draw of the surface, stored sparsely: for each row, the
/// parity levels whose affected-stratum probability is not negligible.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DrawSurface {
    /// Row `i` owns entries `row_start[i]..row_start[i + 1]`.
    pub row_start: Vec<u32>,
    pub level: Vec<u32>,
    pub cate: Vec<f64>,
    pub pi: Vec<f64>,
    /// Optional dense CATE_j for every row and level 1..=J (row-major), used
    /// for transport to a population.
    pub dense: Option<Vec<f32>>,
}

impl DrawSurface {
    pub fn new() -> Self {
        DrawSurface { row_start: vec![0], ..Default::default() }
    }

    pub fn push(&mut self, level: u32, cate: f64, pi: f64) {
        self.level.push(level);
        self.cate.push(cate);
        self.pi.push(pi);
    }

    pub fn end_row(&mut self) {
        self.row_start.push(self.level.len() as u32);
    }

    pub fn n_rows(&self) -> usize {
        self.row_start.len() - 1
    }

    /// (level, cate, pi) entries of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (u32, f64, f64)> + '_ {
        let (a, b) = (self.row_start[i] as usize, self.row_start[i + 1] as usize);
        (a..b).map(move |e| (self.level[e], self.cate[e], self.pi[e]))
    }

    /// Build from dense per-row vectors indexed by level - 1.
    pub fn from_dense(cate: &[Vec<f64>], pi: &[Vec<f64>]) -> Self {
        let mut d = DrawSurface::new();
        for (c, p) in cate.iter().zip(pi) {
            for (j, (&cv, &pv)) in c.iter().zip(p).enumerate() {
                if pv > 0.0 {
                    d.push(j as u32 + 1, cv, pv);
                }
            }
            d.end_row();
        }
        d
    }

    /// (sum of cate * pi, sum of pi) over selected rows and, optionally, one level.
    pub fn weighted_sums(&self, members: Option<&[bool]>, level: Option<u32>) -> (f64, f64) {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..self.n_rows() {
            if members.is_some_and(|m| !m[i]) {
                continue;
            }
            for (j, c, p) in self.row(i) {
                if level.is_none_or(|l| l == j) {
                    num += c * p;
                    den += p;
                }
            }
        }
        (num, den)
    }

    /// Per-row total affected mass and mixed CATE (None when the mass is zero).
    pub fn row_mixed(&self, i: usize) -> (f64, Option<f64>) {
        let (mut num, mut den) = (0.0, 0.0);
        for (_, c, p) in self.row(i) {
            num += c * p;
            den += p;
        }
        (den, (den > 0.0).then(|| num / den))
    }
}

/// Posterior draws of the surface for one analysis sample.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CateSurface {
    pub big_j: u32,
    pub draws: Vec<DrawSurface>,
}

impl CateSurface {
    pub fn n_rows(&self) -> usize {
        self.draws.first().map_or(0, DrawSurface::n_rows)
    }
}

/// Share of affected mass at each parity level: rows of `pi` are units,
/// columns are levels 1..=J.
pub fn kappa_weights(pi: &[Vec<f64>]) -> Result<Vec<f64>> {
    let levels = pi.iter().map(Vec::len).max().unwrap_or(0);
    let mut k = vec![0.0; levels];
    for row in pi {
        for (j, &p) in row.iter().enumerate() {
            if !(p >= 0.0) {
                return param(format!("negative or non-finite stratum probability {p}"));
            }
            k[j] += p;
        }
    }
    let total: f64 = k.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoAffectedUnits);
    }
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

fn check_nonempty(surface: &CateSurface) -> Result<()> {
    if surface.draws.is_empty() {
        return param("surface has no draws");
    }
    Ok(())
}

/// Per-draw MATE^a over all rows.
pub fn mate_draws(surface: &CateSurface) -> Result<Vec<f64>> {
    check_nonempty(surface)?;
    surface
        .draws
        .iter()
        .map(|d| {
            let (num, den) = d.weighted_sums(None, None);
            if den > 0.0 {
                Ok(num / den)
            } else {
                Err(Error::NoAffectedUnits)
            }
        })
        .collect()
}

/// Mixed average treatment effect among the affected over the whole sample.
pub fn mate_affected(surface: &CateSurface) -> Result<EffectSummary> {
    summarize("MATE^a", &mate_draws(surface)?)
}

/// Per-draw mixed CATE within a subgroup; `level = None` pools over parities.
pub fn mcate_draws(surface: &CateSurface, members: &[bool], level: Option<u32>) -> Result<Vec<f64>> {
    check_nonempty(surface)?;
    if members.len() != surface.n_rows() {
        return Err(Error::Shape { expected: surface.n_rows(), got: members.len() });
    }
    if !members.iter().any(|&m| m) {
        return Err(Error::EmptySubgroup("subgroup has no members".into()));
    }
    surface
        .draws
        .iter()
        .map(|d| {
            let (num, den) = d.weighted_sums(Some(members), level);
            if den > 0.0 {
                Ok(num / den)
            } else {
                Err(Error::NoAffectedUnits)
            }
        })
        .collect()
}

pub fn mcate(surface: &CateSurface, members: &[bool], level: Option<u32>, name: &str) -> Result<EffectSummary> {
    summarize(name, &mcate_draws(surface, members, level)?)
}

/// MATE^a at one parity level. Draws with no mass at the level are skipped;
/// `None` is returned when every draw was skipped.
pub fn mate_by_parity(surface: &CateSurface, j: u32) -> Result<Option<EffectSummary>> {
    check_nonempty(surface)?;
    if j == 0 || j > surface.big_j {
        return param(format!("parity {j} outside 1..={}", surface.big_j));
    }
    let draws: Vec<f64> = surface
        .draws
        .iter()
        .filter_map(|d| {
            let (num, den) = d.weighted_sums(None, Some(j));
            (den > 0.0).then(|| num / den)
        })
        .collect();
    if draws.is_empty() {
        return Ok(None);
    }
    summarize(format!("MATE^a_{j}"), &draws).map(Some)
}

/// Posterior of the spread between subgroup effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityRange {
    /// Per-draw max minus min over subgroups (never negative).
    pub per_draw: EffectSummary,
    /// Largest minus smallest subgroup, labelled by posterior-mean MCATE.
    pub fixed: EffectSummary,
    pub fixed_largest: usize,
    pub fixed_smallest: usize,
    /// P(d < 0) for the fixed-label difference.
    pub prob_negative: f64,
    pub prob_negative_per_draw: f64,
    pub fixed_draws: Vec<f64>,
}

pub fn heterogeneity_range(surface: &CateSurface, subgroups: &[Vec<bool>]) -> Result<HeterogeneityRange> {
    if subgroups.len() < 2 {
        return param("heterogeneity range needs at least two subgroups");
    }
    let per_group: Vec<Vec<f64>> =
        subgroups.iter().map(|m| mcate_draws(surface, m, None)).collect::<Result<_>>()?;
    let n_draws = per_group[0].len();
    let means: Vec<f64> = per_group.iter().map(|d| d.iter().sum::<f64>() / n_draws as f64).collect();
    let argmax = (0..means.len()).fold(0, |b, g| if means[g] > means[b] { g } else { b });
    let argmin = (0..means.len()).fold(0, |b, g| if means[g] < means[b] { g } else { b });
    let mut spread = Vec::with_capacity(n_draws);
    let mut fixed = Vec::with_capacity(n_draws);
    for d in 0..n_draws {
        let (lo, hi) = per_group
            .iter()
            .map(|g| g[d])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        spread.push(hi - lo);
        fixed.push(per_group[argmax][d] - per_group[argmin][d]);
    }
    let neg = |v: &[f64]| v.iter().filter(|&&x| x < 0.0).count() as f64 / v.len() as f64;
    Ok(HeterogeneityRange {
        per_draw: summarize("d_per_draw", &spread)?,
        fixed: summarize("d_fixed", &fixed)?,
        fixed_largest: argmax,
        fixed_smallest: argmin,
        prob_negative: neg(&fixed),
        prob_negative_per_draw: neg(&spread),
        fixed_draws: fixed,
    })
}

/// Scaled Bayesian bootstrap weights: one Exp(1) draw per cluster, times the
/// survey weight, normalized to sum to one. Clusters are visited in sorted order.
pub fn bootstrap_weights<R: Rng + ?Sized>(
    clusters: &[Option<u64>],
    survey_weights: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if clusters.len() != survey_weights.len() {
        return Err(Error::Shape { expected: clusters.len(), got: survey_weights.len() });
    }
    let mut draws: BTreeMap<u64, f64> = BTreeMap::new();
    for (i, c) in clusters.iter().enumerate() {
        let c = c.ok_or(Error::MissingCluster(i))?;
        draws.insert(c, 0.0);
        if !(survey_weights[i] > 0.0) {
            return param(format!("survey weight of row {i} must be positive"));
        }
    }
    for v in draws.values_mut() {
        *v = Exp1.sample(rng);
    }
    let mut w: Vec<f64> =
        clusters.iter().zip(survey_weights).map(|(c, sw)| draws[&c.unwrap()] * sw).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Survey-weighted relative frequency of each observed parity level 1..=J
/// (index j - 1), normalized over j >= 1.
pub fn parity_weights(w: &[u32], survey_weights: &[f64], big_j: u32) -> Result<Vec<f64>> {
    let mut out = vec![0.0; big_j as usize];
    for (&wi, &sw) in w.iter().zip(survey_weights) {
        if wi >= 1 && wi <= big_j {
            out[wi as usize - 1] += sw;
        }
    }
    let total: f64 = out.iter().sum();
    if !(total > 0.0) {
        return param("no units with parity of at least one");
    }
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Population average effect transported through the bootstrap-weighted
/// covariate distribution. Requires draws carrying dense CATE values and the
/// caller's explicit assertion of the transport assumptions.
pub fn pate<R: Rng + ?Sized>(
    surface: &CateSurface,
    clusters: &[Option<u64>],
    survey_weights: &[f64],
    parity_w: &[f64],
    n_boot: usize,
    transport_asserted: bool,
    rng: &mut R,
) -> Result<EffectSummary> {
    summarize("PATE", &pate_draws(surface, clusters, survey_weights, parity_w, n_boot, transport_asserted, rng)?)
}

/// Draws behind `pate`: one value per (dense posterior draw, bootstrap replicate).
pub fn pate_draws<R: Rng + ?Sized>(
    surface: &CateSurface,
    clusters: &[Option<u64>],
    survey_weights: &[f64],
    parity_w: &[f64],
    n_boot: usize,
    transport_asserted: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !transport_asserted {
        return Err(Error::TransportNotAsserted);
    }
    let big_j = surface.big_j as usize;
    if parity_w.len() != big_j {
        return Err(Error::Shape { expected: big_j, got: parity_w.len() });
    }
    let dense: Vec<&[f32]> = surface.draws.iter().filter_map(|d| d.dense.as_deref()).collect();
    if dense.is_empty() {
        return param("no posterior draws carry dense CATE values");
    }
    if n_boot == 0 {
        return param("n_boot must be positive");
    }
    let n = clusters.len();
    let boots: Vec<Vec<f64>> =
        (0..n_boot).map(|_| bootstrap_weights(clusters, survey_weights, rng)).collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(dense.len() * n_boot);
    for cate in &dense {
        if cate.len() != n * big_j {
            return Err(Error::Shape { expected: n * big_j, got: cate.len() });
        }
        // Row-level effect already mixed over parity weights.
        let mixed: Vec<f64> = (0..n)
            .map(|i| (0..big_j).map(|j| parity_w[j] * cate[i * big_j + j] as f64).sum())
            .collect();
        for b in &boots {
            values.push(b.iter().zip(&mixed).map(|(w, m)| w * m).sum());
        }
    }
    Ok(values)
}
