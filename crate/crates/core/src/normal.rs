//! Standard normal primitives: CDF and quantile with a clamped argument range,
//! interval probabilities, truncated-normal sampling and the bivariate normal CDF.

use rand::Rng;
use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{PI, SQRT_2};

/// Arguments of `norm_cdf` and outputs of `norm_quantile` are clamped to this magnitude.
pub const CLAMP: f64 = 8.0;

const TWO_PI: f64 = 2.0 * PI;

/// Unclamped standard normal CDF. Infinite arguments map to 0 and 1.
#[inline]
pub(crate) fn phi_raw(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else if x == f64::INFINITY {
        1.0
    } else {
        0.5 * erfc(-x / SQRT_2)
    }
}

/// Standard normal CDF with the argument clamped to `[-CLAMP, CLAMP]`.
/// Infinite arguments still map exactly to 0 and 1.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    if x.is_infinite() {
        return phi_raw(x);
    }
    phi_raw(x.clamp(-CLAMP, CLAMP))
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / TWO_PI.sqrt()
}

/// Standard normal quantile, clamped to `[-CLAMP, CLAMP]`.
pub fn norm_quantile(p: f64) -> f64 {
    quantile_raw(p).clamp(-CLAMP, CLAMP)
}

#[inline]
fn quantile_raw(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        -SQRT_2 * erfc_inv(2.0 * p)
    }
}

/// P(lo <= Z < hi) for standard normal Z, computed on the tail side that keeps
/// relative precision. Arguments are clamped like `norm_cdf`.
pub fn interval_prob(lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let p = if lo > 0.0 {
        norm_cdf(-lo) - norm_cdf(-hi)
    } else {
        norm_cdf(hi) - norm_cdf(lo)
    };
    p.max(0.0)
}

/// Draw from a standard normal truncated to `[lo, hi)`. Either bound may be infinite.
///
/// Returns the draw and a flag that is set when the interval carried no usable
/// probability mass and a deterministic fallback point was returned instead.
pub fn sample_truncated_std<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> (f64, bool) {
    debug_assert!(lo < hi);
    // Work on the side where the interval sits in the lower tail.
    if lo > 0.0 {
        let (x, flag) = sample_lower_oriented(-hi, -lo, rng);
        return (clamp_half_open(-x, lo, hi), flag);
    }
    let (x, flag) = sample_lower_oriented(lo, hi, rng);
    (clamp_half_open(x, lo, hi), flag)
}

fn clamp_half_open(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x >= hi {
        hi.next_down()
    } else {
        x
    }
}

/// Interval with `lo <= 0` or entirely negative.
fn sample_lower_oriented<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> (f64, bool) {
    if hi < -6.0 {
        // Far lower tail: reflect and use exponential rejection on [-hi, -lo).
        let (y, flag) = sample_upper_tail(-hi, -lo, rng);
        return (-y, flag);
    }
    let p_lo = phi_raw(lo);
    let p_hi = phi_raw(hi);
    let mass = p_hi - p_lo;
    if !(mass > 1e-300) {
        return (fallback_point(lo, hi), true);
    }
    let u = p_lo + rng.gen::<f64>() * mass;
    let x = quantile_raw(u);
    if x.is_finite() {
        (x, false)
    } else {
        (fallback_point(lo, hi), true)
    }
}

/// Exponential-proposal rejection sampler for Z ~ N(0,1) restricted to [c, d), c >= 0.
fn sample_upper_tail<R: Rng + ?Sized>(c: f64, d: f64, rng: &mut R) -> (f64, bool) {
    let alpha = 0.5 * (c + (c * c + 4.0).sqrt());
    for _ in 0..100_000 {
        let e: f64 = -rng.gen::<f64>().ln() / alpha;
        let y = c + e;
        if y >= d {
            continue;
        }
        let accept = (-0.5 * (y - alpha) * (y - alpha)).exp();
        if rng.gen::<f64>() < accept {
            return (y, false);
        }
    }
    (fallback_point(c, d), true)
}

fn fallback_point(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi.next_down(),
        (false, false) => 0.0,
    }
}

/// Bivariate standard normal CDF P(X <= h, Y <= k) with correlation `rho`.
pub fn bvn_cdf(h: f64, k: f64, rho: f64) -> f64 {
    bvn_upper(-h, -k, rho)
}

/// Probability that a bivariate standard normal with correlation `rho` falls in
/// the rectangle [x_lo, x_hi) x [y_lo, y_hi). Bounds may be infinite.
pub fn bvn_rectangle(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64, rho: f64) -> f64 {
    if x_hi <= x_lo || y_hi <= y_lo {
        return 0.0;
    }
    let p = bvn_cdf(x_hi, y_hi, rho) - bvn_cdf(x_lo, y_hi, rho) - bvn_cdf(x_hi, y_lo, rho)
        + bvn_cdf(x_lo, y_lo, rho);
    p.max(0.0)
}

// Gauss-Legendre nodes and weights (half sets) for 6, 12 and 20 points.
const GL_W: [&[f64]; 3] = [
    &[0.1713244923791705, 0.3607615730481384, 0.4679139345726904],
    &[
        0.04717533638651177,
        0.1069393259953183,
        0.1600783285433464,
        0.2031674267230659,
        0.2334925365383547,
        0.2491470458134029,
    ],
    &[
        0.01761400713915212,
        0.04060142980038694,
        0.06267204833410906,
        0.08327674157670475,
        0.1019301198172404,
        0.1181945319615184,
        0.1316886384491766,
        0.1420961093183821,
        0.1491729864726037,
        0.1527533871307259,
    ],
];
const GL_X: [&[f64]; 3] = [
    &[-0.9324695142031522, -0.6612093864662647, -0.2386191860831970],
    &[
        -0.9815606342467191,
        -0.9041172563704750,
        -0.7699026741943050,
        -0.5873179542866171,
        -0.3678314989981802,
        -0.1252334085114692,
    ],
    &[
        -0.9931285991850949,
        -0.9639719272779138,
        -0.9122344282513259,
        -0.8391169718222188,
        -0.7463319064601508,
        -0.6360536807265150,
        -0.5108670019508271,
        -0.3737060887154196,
        -0.2277858511416451,
        -0.07652652113349733,
    ],
];

/// P(X > dh, Y > dk) for a standard bivariate normal with correlation r
/// (Drezner-Wesolowsky / Genz quadrature).
fn bvn_upper(dh: f64, dk: f64, r: f64) -> f64 {
    if dh == f64::INFINITY || dk == f64::INFINITY {
        return 0.0;
    }
    if dh == f64::NEG_INFINITY {
        return if dk == f64::NEG_INFINITY { 1.0 } else { phi_raw(-dk) };
    }
    if dk == f64::NEG_INFINITY {
        return phi_raw(-dh);
    }
    if r == 0.0 {
        return phi_raw(-dh) * phi_raw(-dk);
    }
    let ng = if r.abs() < 0.3 {
        0
    } else if r.abs() < 0.75 {
        1
    } else {
        2
    };
    let (w, x) = (GL_W[ng], GL_X[ng]);
    let h = dh;
    let mut k = dk;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = r.asin();
        for i in 0..w.len() {
            for sign in [1.0, -1.0] {
                let sn = (asr * (sign * x[i] + 1.0) / 2.0).sin();
                bvn += w[i] * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / (2.0 * TWO_PI) + phi_raw(-h) * phi_raw(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            bvn = a
                * (-(bs / as_ + hk) / 2.0).exp()
                * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
            if hk > -160.0 {
                let b = bs.sqrt();
                bvn -= (-hk / 2.0).exp()
                    * TWO_PI.sqrt()
                    * phi_raw(-b / a)
                    * b
                    * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a /= 2.0;
            for i in 0..w.len() {
                for sign in [-1.0, 1.0] {
                    let xs = (a * (sign * x[i] + 1.0)).powi(2);
                    let rs = (1.0 - xs).sqrt();
                    let asr = -(bs / xs + hk) / 2.0;
                    if asr > -100.0 {
                        bvn += a
                            * w[i]
                            * asr.exp()
                            * ((-hk * xs / (2.0 * (1.0 + rs).powi(2))).exp() / rs
                                - (1.0 + c * xs * (1.0 + d * xs)));
                    }
                }
            }
            bvn = -bvn / TWO_PI;
        }
        if r > 0.0 {
            bvn += phi_raw(-h.max(k));
        } else {
            bvn = -bvn;
            if k > h {
                if h < 0.0 {
                    bvn += phi_raw(k) - phi_raw(h);
                } else {
                    bvn += phi_raw(-h) - phi_raw(-k);
                }
            }
        }
    }
    bvn.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: P(X<=h, Y<=k) = ∫_{-∞}^{h} φ(x) Φ((k - ρx)/√(1-ρ²)) dx,
    /// by composite Simpson on a truncated range.
    fn bvn_quadrature(h: f64, k: f64, rho: f64) -> f64 {
        let lo = -12.0;
        let hi = h.min(12.0);
        if hi <= lo {
            return 0.0;
        }
        let n = 20_000;
        let step = (hi - lo) / n as f64;
        let s = (1.0 - rho * rho).sqrt();
        let f = |x: f64| norm_pdf(x) * phi_raw((k - rho * x) / s);
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let x = lo + i as f64 * step;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        acc * step / 3.0
    }

    #[test]
    fn cdf_and_quantile_basics() {
        assert_abs_diff_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(norm_cdf(1.0), 0.841_344_746_068_542_9, epsilon = 1e-14);
        assert_eq!(norm_cdf(f64::NEG_INFINITY), 0.0);
        assert_eq!(norm_cdf(f64::INFINITY), 1.0);
        assert_eq!(norm_cdf(-50.0), norm_cdf(-CLAMP));
        assert_abs_diff_eq!(norm_quantile(0.999), 3.090_232_306_167_813_5, epsilon = 1e-9);
        assert_eq!(norm_quantile(0.0), -CLAMP);
        for &p in &[1e-10, 0.01, 0.3, 0.5, 0.77, 0.999_999] {
            assert_abs_diff_eq!(norm_cdf(norm_quantile(p)), p, epsilon = 1e-12 * p.max(1e-3));
        }
    }

    #[test]
    fn bvn_matches_quadrature_oracle() {
        for &rho in &[-0.95, -0.6, -0.2, 0.1, 0.5, 0.9, 0.97] {
            for &(h, k) in &[(0.0, 0.0), (1.2, -0.4), (-2.0, 0.5), (2.5, 2.5), (-1.0, -1.3)] {
                let got = bvn_cdf(h, k, rho);
                let want = bvn_quadrature(h, k, rho);
                assert_abs_diff_eq!(got, want, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn bvn_closed_forms() {
        for rho in [-0.8f64, 0.0, 0.3, 0.9] {
            let want = 0.25 + rho.asin() / TWO_PI;
            assert_abs_diff_eq!(bvn_cdf(0.0, 0.0, rho), want, epsilon = 1e-13);
        }
        assert_abs_diff_eq!(bvn_cdf(0.7, -0.2, 0.0), phi_raw(0.7) * phi_raw(-0.2), epsilon = 1e-15);
        assert_abs_diff_eq!(bvn_cdf(0.7, f64::INFINITY, 0.5), phi_raw(0.7), epsilon = 1e-15);
        let total = bvn_rectangle(
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            0.9,
        );
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn truncated_draws_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cases = [
            (0.0, f64::INFINITY),
            (f64::NEG_INFINITY, 0.0),
            (-0.3, 0.2),
            (7.0, 8.0),
            (-40.0, -39.0),
            (12.0, f64::INFINITY),
            (1.0, 1.0 + 1e-9),
        ];
        for &(lo, hi) in &cases {
            for _ in 0..2000 {
                let (x, _) = sample_truncated_std(lo, hi, &mut rng);
                assert!(x >= lo && x < hi, "{x} outside [{lo}, {hi})");
            }
        }
    }

    #[test]
    fn truncated_tail_mean_matches_closed_form() {
        // E[Z | Z >= c] = φ(c) / (1 - Φ(c))
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = 6.5;
        let n = 50_000;
        let mean: f64 =
            (0..n).map(|_| sample_truncated_std(c, f64::INFINITY, &mut rng).0).sum::<f64>() / n as f64;
        let want = norm_pdf(c) / phi_raw(-c);
        assert_abs_diff_eq!(mean, want, epsilon = 0.005);
    }
}
