//! Two-stage least squares with covariates and heteroscedasticity-robust (HC1)
//! standard errors.

use crate::error::{param, Error, Result};
use crate::normal::norm_quantile;
use crate::strata::{CovariateKind, Dataset};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A named regressor column.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column { name: name.into(), values }
    }
}

/// How covariates enter the linear benchmark.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CovariateSpec {
    /// Numeric covariates that also get a squared term.
    pub squares: Vec<String>,
    /// Covariates left out of the regression.
    #[serde(default)]
    pub exclude: Vec<String>,
}

impl CovariateSpec {
    pub fn with_squares(names: &[&str]) -> Self {
        CovariateSpec { squares: names.iter().map(|s| s.to_string()).collect(), exclude: Vec::new() }
    }

    /// Numeric covariates enter linearly (plus squares where requested);
    /// categorical ones as dummies for every level but the first.
    pub fn columns(&self, data: &Dataset) -> Result<Vec<Column>> {
        for s in &self.squares {
            if !data.covariates.iter().any(|c| &c.name == s && c.kind == CovariateKind::Numeric) {
                return param(format!("squared term requested for unknown or non-numeric covariate `{s}`"));
            }
        }
        let mut out = Vec::new();
        for (c, cov) in data.covariates.iter().enumerate() {
            if self.exclude.contains(&cov.name) {
                continue;
            }
            let col: Vec<f64> = data.rows.iter().map(|r| r.x[c]).collect();
            match cov.kind {
                CovariateKind::Numeric => {
                    if self.squares.contains(&cov.name) {
                        out.push(Column::new(format!("{}^2", cov.name), col.iter().map(|v| v * v).collect()));
                    }
                    out.insert(out.len() - self.squares.contains(&cov.name) as usize, Column::new(cov.name.clone(), col));
                }
                CovariateKind::Categorical { levels } => {
                    for level in 1..levels {
                        let label = cov.labels.get(level as usize).cloned().unwrap_or_else(|| level.to_string());
                        out.push(Column::new(
                            format!("{}={label}", cov.name),
                            col.iter().map(|&v| (v == level as f64) as u8 as f64).collect(),
                        ));
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TslsFit {
    pub estimate: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    pub first_stage_f: f64,
    /// First-stage F below 10.
    pub weak_instrument: bool,
    pub n: usize,
}

/// Coverage of the reported interval.
pub const CI_LEVEL: f64 = 0.90;

struct Ols {
    beta: DVector<f64>,
    xtwx_inv: DMatrix<f64>,
}

/// Reject constant-zero or collinear columns, naming the offending one.
pub(crate) fn check_rank(names: &[String], cols: &[Vec<f64>], weights: &[f64]) -> Result<()> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for (name, col) in names.iter().zip(cols) {
        let norm0: f64 = col.iter().zip(weights).map(|(v, w)| w * v * v).sum();
        if !(norm0 > 0.0) {
            return Err(Error::RankDeficient(name.clone()));
        }
        let mut r = col.clone();
        for b in &basis {
            let dot: f64 = r.iter().zip(b).zip(weights).map(|((x, y), w)| w * x * y).sum();
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm: f64 = r.iter().zip(weights).map(|(v, w)| w * v * v).sum();
        if norm <= 1e-10 * norm0 {
            return Err(Error::RankDeficient(name.clone()));
        }
        let s = norm.sqrt();
        r.iter_mut().for_each(|x| *x /= s);
        basis.push(r);
    }
    Ok(())
}

fn design(cols: &[&[f64]], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

fn wls(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> Result<Ols> {
    let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * w[i]);
    let xtwx = x.transpose() * &xw;
    let chol = xtwx.cholesky().ok_or_else(|| Error::RankDeficient("design".into()))?;
    let beta = chol.solve(&(xw.transpose() * y));
    Ok(Ols { beta, xtwx_inv: chol.inverse() })
}

/// 2SLS of `y` on `w` instrumented by `z`, with exogenous `covariates` and an
/// intercept. Optional `weights` apply weighted least squares in both stages.
pub fn fit_2sls(y: &[f64], w: &[f64], z: &[f64], covariates: &[Column], weights: Option<&[f64]>) -> Result<TslsFit> {
    let n = y.len();
    for len in [w.len(), z.len()].into_iter().chain(covariates.iter().map(|c| c.values.len())) {
        if len != n {
            return Err(Error::Shape { expected: n, got: len });
        }
    }
    let ones = vec![1.0; n];
    let wt: Vec<f64> = match weights {
        Some(v) => {
            if v.len() != n {
                return Err(Error::Shape { expected: n, got: v.len() });
            }
            if v.iter().any(|x| !(*x > 0.0)) {
                return param("weights must be positive");
            }
            v.to_vec()
        }
        None => ones.clone(),
    };
    let k = 2 + covariates.len();
    if n <= k {
        return param(format!("need more than {k} rows, got {n}"));
    }
    let mut names = vec!["(intercept)".to_string(), "instrument".to_string()];
    names.extend(covariates.iter().map(|c| c.name.clone()));
    let mut first_cols: Vec<Vec<f64>> = vec![ones.clone(), z.to_vec()];
    first_cols.extend(covariates.iter().map(|c| c.values.clone()));
    check_rank(&names, &first_cols, &wt)?;
    names[1] = "treatment".into();
    let mut struct_cols: Vec<Vec<f64>> = vec![ones.clone(), w.to_vec()];
    struct_cols.extend(covariates.iter().map(|c| c.values.clone()));
    check_rank(&names, &struct_cols, &wt)?;

    let wv = DVector::from_vec(wt.clone());
    let refs: Vec<&[f64]> = first_cols.iter().map(|c| c.as_slice()).collect();
    let x1 = design(&refs, n);
    let wvec = DVector::from_column_slice(w);
    let s1 = wls(&x1, &wvec, &wv)?;
    let w_hat = &x1 * &s1.beta;

    // First-stage F for the single excluded instrument.
    let rss = |fitted: &DVector<f64>| -> f64 { (0..n).map(|i| wt[i] * (w[i] - fitted[i]).powi(2)).sum() };
    let rss_u = rss(&w_hat);
    let mut restricted = first_cols.clone();
    restricted.remove(1);
    let rrefs: Vec<&[f64]> = restricted.iter().map(|c| c.as_slice()).collect();
    let xr = design(&rrefs, n);
    let sr = wls(&xr, &wvec, &wv)?;
    let rss_r = rss(&(&xr * &sr.beta));
    let first_stage_f = if rss_u > 0.0 { (rss_r - rss_u) / (rss_u / (n - k) as f64) } else { f64::INFINITY };

    let mut x2 = x1.clone();
    x2.set_column(1, &w_hat);
    let yv = DVector::from_column_slice(y);
    let s2 = wls(&x2, &yv, &wv)?;
    // Structural residuals use the observed treatment.
    let mut x_obs = x1;
    x_obs.set_column(1, &wvec);
    let u = &yv - &x_obs * &s2.beta;
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let row = x2.row(i);
        let s = (wt[i] * u[i]).powi(2);
        meat += row.transpose() * row * s;
    }
    let v = &s2.xtwx_inv * meat * &s2.xtwx_inv * (n as f64 / (n - k) as f64);
    let se = v[(1, 1)].sqrt();
    let estimate = s2.beta[1];
    let zq = norm_quantile(0.5 + CI_LEVEL / 2.0);
    if !(se > 0.0) || !estimate.is_finite() {
        return param("degenerate second stage: standard error is not positive");
    }
    Ok(TslsFit {
        estimate,
        se,
        lo: estimate - zq * se,
        hi: estimate + zq * se,
        first_stage_f,
        weak_instrument: first_stage_f < 10.0,
        n,
    })
}

/// 2SLS on an analysis sample with covariates expanded by `spec`.
pub fn fit_2sls_dataset(data: &Dataset, spec: &CovariateSpec, weighted: bool) -> Result<TslsFit> {
    let y: Vec<f64> = data.rows.iter().map(|r| r.y as f64).collect();
    let w: Vec<f64> = data.rows.iter().map(|r| r.w as f64).collect();
    let z: Vec<f64> = data.rows.iter().map(|r| r.z as f64).collect();
    let weights: Vec<f64> = data.rows.iter().map(|r| r.weight).collect();
    let cols = spec.columns(data)?;
    fit_2sls(&y, &w, &z, &cols, weighted.then_some(weights.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strata::{AnalysisRow, Covariate};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn wald_ratio_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 500;
        let z: Vec<f64> = (0..n).map(|_| rng.gen_bool(0.4) as u8 as f64).collect();
        let w: Vec<f64> = z.iter().map(|&zi| rng.gen_bool(0.3 + 0.4 * zi) as u8 as f64).collect();
        let y: Vec<f64> = w.iter().map(|&wi| rng.gen_bool(0.5 - 0.2 * wi) as u8 as f64).collect();
        let mean = |v: &[f64], arm: f64| {
            let sel: Vec<f64> = v.iter().zip(&z).filter(|(_, &zi)| zi == arm).map(|(x, _)| *x).collect();
            sel.iter().sum::<f64>() / sel.len() as f64
        };
        let wald = (mean(&y, 1.0) - mean(&y, 0.0)) / (mean(&w, 1.0) - mean(&w, 0.0));
        let fit = fit_2sls(&y, &w, &z, &[], None).unwrap();
        assert_abs_diff_eq!(fit.estimate, wald, epsilon = 1e-12);
        assert!(fit.lo < fit.estimate && fit.estimate < fit.hi);
    }

    fn linear_iv(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut y, mut w, mut z, mut x) = (vec![], vec![], vec![], vec![]);
        for _ in 0..n {
            let xi: f64 = rng.sample(StandardNormal);
            let zi = rng.gen_bool(0.5) as u8 as f64;
            let e: f64 = rng.sample(StandardNormal);
            let v: f64 = rng.sample(StandardNormal);
            // Correlated errors make OLS inconsistent.
            let u = 0.6 * v + 0.8 * e;
            let wi = 0.8 * zi + xi + v;
            y.push(-0.05 * wi + 0.3 * xi + u);
            w.push(wi);
            z.push(zi);
            x.push(xi);
        }
        (y, w, z, x)
    }

    #[test]
    fn known_coefficient_recovered() {
        let (y, w, z, x) = linear_iv(20_000, 2);
        let fit = fit_2sls(&y, &w, &z, &[Column::new("x", x)], None).unwrap();
        assert!((fit.estimate + 0.05).abs() < 3.0 * fit.se, "{} +- {}", fit.estimate, fit.se);
        assert!(!fit.weak_instrument);
        assert!(fit.first_stage_f > 1000.0);
    }

    #[test]
    fn robust_se_matches_monte_carlo_spread() {
        let est: Vec<f64> = (0..200)
            .map(|s| {
                let (y, w, z, x) = linear_iv(1000, 100 + s);
                fit_2sls(&y, &w, &z, &[Column::new("x", x)], None).unwrap().estimate
            })
            .collect();
        let m = est.iter().sum::<f64>() / est.len() as f64;
        let sd = (est.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt();
        let (y, w, z, x) = linear_iv(1000, 99);
        let se = fit_2sls(&y, &w, &z, &[Column::new("x", x)], None).unwrap().se;
        assert!((se / sd - 1.0).abs() < 0.2, "se {se} vs sd {sd}");
    }

    #[test]
    fn scale_equivariance() {
        let (y, w, z, x) = linear_iv(2000, 3);
        let a = fit_2sls(&y, &w, &z, &[Column::new("x", x.clone())], None).unwrap();
        let y3: Vec<f64> = y.iter().map(|v| 3.0 * v).collect();
        let b = fit_2sls(&y3, &w, &z, &[Column::new("x", x)], None).unwrap();
        assert_abs_diff_eq!(b.estimate, 3.0 * a.estimate, epsilon = 1e-12);
        assert_abs_diff_eq!(b.se, 3.0 * a.se, epsilon = 1e-12);
    }

    #[test]
    fn zero_and_collinear_columns_are_named() {
        let (y, w, z, x) = linear_iv(300, 4);
        let zero = Column::new("zeros", vec![0.0; 300]);
        let err = fit_2sls(&y, &w, &z, &[Column::new("x", x.clone()), zero], None).unwrap_err();
        assert_eq!(err, Error::RankDeficient("zeros".into()));
        let twice = Column::new("2x", x.iter().map(|v| 2.0 * v).collect());
        let err = fit_2sls(&y, &w, &z, &[Column::new("x", x), twice], None).unwrap_err();
        assert_eq!(err, Error::RankDeficient("2x".into()));
    }

    #[test]
    fn weak_instrument_is_flagged_not_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 400;
        let z: Vec<f64> = (0..n).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
        let w: Vec<f64> = z.iter().map(|zi| 0.02 * zi + rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = w.iter().map(|wi| wi + rng.sample::<f64, _>(StandardNormal)).collect();
        let fit = fit_2sls(&y, &w, &z, &[], None).unwrap();
        assert!(fit.weak_instrument);
    }

    #[test]
    fn unit_weights_match_unweighted() {
        let (y, w, z, x) = linear_iv(500, 6);
        let cols = [Column::new("x", x)];
        let a = fit_2sls(&y, &w, &z, &cols, None).unwrap();
        let b = fit_2sls(&y, &w, &z, &cols, Some(&vec![1.0; 500])).unwrap();
        assert_abs_diff_eq!(a.estimate, b.estimate, epsilon = 1e-12);
        assert_abs_diff_eq!(a.se, b.se, epsilon = 1e-12);
        // Integer weights match duplicated rows in the point estimate.
        let wt: Vec<f64> = (0..500).map(|i| 1.0 + (i % 2) as f64).collect();
        let c = fit_2sls(&y, &w, &z, &cols, Some(&wt)).unwrap();
        let dup = |v: &[f64]| -> Vec<f64> { v.iter().enumerate().flat_map(|(i, &x)| std::iter::repeat(x).take(1 + i % 2)).collect() };
        let d = fit_2sls(&dup(&y), &dup(&w), &dup(&z), &[Column::new("x", dup(&cols[0].values))], None).unwrap();
        assert_abs_diff_eq!(c.estimate, d.estimate, epsilon = 1e-10);
    }

    #[test]
    fn dataset_columns_expand_terms() {
        let rows = (0..6)
            .map(|i| AnalysisRow {
                y: (i % 2) as u8,
                w: i as u32,
                z: (i % 3 == 0) as u8,
                x: vec![20.0 + i as f64, (i % 3) as f64],
                weight: 1.0,
                cluster: None,
            })
            .collect();
        let data = Dataset::new(
            vec![Covariate::numeric("age"), Covariate::categorical("edu", vec!["none".into(), "primary".into(), "secondary".into()])],
            rows,
        )
        .unwrap();
        let cols = CovariateSpec::with_squares(&["age"]).columns(&data).unwrap();
        let names: Vec<&str> = cols.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["age", "age^2", "edu=primary", "edu=secondary"]);
        assert_eq!(cols[3].values, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert!(CovariateSpec::with_squares(&["edu"]).columns(&data).is_err());
    }
}
