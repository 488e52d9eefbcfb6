//! Newton-Raphson maximum likelihood for the Poisson and probit auxiliary
//! regressions on (1, age, age^2).

use crate::error::{Error, Result};
use crate::normal::{norm_pdf, phi_raw};
use crate::tsls::check_rank;
use nalgebra::{Matrix3, Vector3};

pub const MAX_NEWTON: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmFit {
    pub coef: [f64; 3],
    pub se: [f64; 3],
    pub iterations: usize,
}

#[derive(Clone, Copy)]
pub(crate) enum Family {
    Poisson,
    Probit,
}

fn quad(age: f64) -> Vector3<f64> {
    Vector3::new(1.0, age, age * age)
}

/// Log-likelihood, gradient and expected information at `beta`.
fn evaluate(family: Family, age: &[f64], y: &[f64], beta: &Vector3<f64>) -> (f64, Vector3<f64>, Matrix3<f64>) {
    let mut ll = 0.0;
    let mut grad = Vector3::zeros();
    let mut info = Matrix3::zeros();
    for (&a, &yi) in age.iter().zip(y) {
        let x = quad(a);
        let eta = x.dot(beta);
        match family {
            Family::Poisson => {
                let mu = eta.exp();
                ll += yi * eta - mu;
                grad += x * (yi - mu);
                info += x * x.transpose() * mu;
            }
            Family::Probit => {
                let p = phi_raw(eta).clamp(1e-300, 1.0);
                let q = phi_raw(-eta).clamp(1e-300, 1.0);
                let d = norm_pdf(eta);
                ll += yi * p.ln() + (1.0 - yi) * q.ln();
                grad += x * (d * (yi / p - (1.0 - yi) / q));
                info += x * x.transpose() * (d * d / (p * q));
            }
        }
    }
    (ll, grad, info)
}

/// Fit by Newton (Fisher scoring for the probit) with step halving.
pub(crate) fn fit_glm(family: Family, age: &[f64], y: &[f64]) -> Result<GlmFit> {
    let n = age.len();
    let names = ["(intercept)".to_string(), "age".to_string(), "age^2".to_string()];
    let cols = vec![vec![1.0; n], age.to_vec(), age.iter().map(|a| a * a).collect()];
    check_rank(&names, &cols, &vec![1.0; n])?;
    // Centre and scale age so the information matrix is well conditioned; map back at the end.
    let m = age.iter().sum::<f64>() / n as f64;
    let s = (age.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    let t: Vec<f64> = age.iter().map(|a| (a - m) / s).collect();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let start = match family {
        Family::Poisson => ybar.max(1e-8).ln(),
        Family::Probit => crate::normal::norm_quantile(ybar.clamp(1e-6, 1.0 - 1e-6)),
    };
    let mut beta = Vector3::new(start, 0.0, 0.0);
    let (mut ll, mut grad, mut info) = evaluate(family, &t, y, &beta);
    for it in 1..=MAX_NEWTON {
        let Some(chol) = info.cholesky() else {
            return Err(Error::RankDeficient("age".into()));
        };
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let (new_beta, new_eval) = loop {
            let cand = beta + step * scale;
            let e = evaluate(family, &t, y, &cand);
            if e.0.is_finite() && e.0 >= ll - 1e-12 * ll.abs() {
                break (cand, e);
            }
            scale *= 0.5;
            if scale < 1e-10 {
                return Err(Error::NonConvergence(it));
            }
        };
        let change = (new_beta - beta).amax();
        beta = new_beta;
        (ll, grad, info) = new_eval;
        if change < 1e-10 {
            let cov = info.try_inverse().ok_or_else(|| Error::RankDeficient("age".into()))?;
            return Ok(back_transform(&beta, &cov, m, s, it));
        }
    }
    Err(Error::NonConvergence(MAX_NEWTON))
}

/// Coefficients on (1, t, t^2) with t = (age - m)/s, expressed on (1, age, age^2).
fn back_transform(b: &Vector3<f64>, cov: &Matrix3<f64>, m: f64, s: f64, iterations: usize) -> GlmFit {
    // beta_raw = A * b.
    let a = Matrix3::new(
        1.0, -m / s, m * m / (s * s),
        0.0, 1.0 / s, -2.0 * m / (s * s),
        0.0, 0.0, 1.0 / (s * s),
    );
    let coef = a * b;
    let v = a * cov * a.transpose();
    GlmFit {
        coef: [coef[0], coef[1], coef[2]],
        se: [v[(0, 0)].sqrt(), v[(1, 1)].sqrt(), v[(2, 2)].sqrt()],
        iterations,
    }
}
