//! Property tests over the public API.

use prince_core::count_model::{count_pmf_vec, round_latent};
use prince_core::diagnostics::{rhat, ChainMatrix};
use prince_core::estimands::summarize;
use prince_core::strata::{enumerate_strata, strata_prob_correlated, Marginal};
use prince_core::tsls::fit_2sls;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feasible_strata_probabilities_sum_to_one(
        mean0 in -3.0f64..8.0, sd0 in 0.1f64..4.0,
        mean1 in -3.0f64..8.0, sd1 in 0.1f64..4.0,
        big_j in 1u32..10, z in 0u8..2, w_frac in 0.0f64..1.0,
        rho in -0.95f64..0.95,
    ) {
        let w = (w_frac * big_j as f64).floor() as u32;
        let (m0, m1) = (Marginal { mean: mean0, sigma: sd0 }, Marginal { mean: mean1, sigma: sd1 });
        let strata = enumerate_strata(z, w, big_j).unwrap();
        let total: f64 = strata
            .iter()
            .map(|&s| strata_prob_correlated(s, z, w, m0, m1, big_j, rho).unwrap())
            .inspect(|p| assert!((0.0..=1.0).contains(p)))
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "total {}", total);
        for s in strata {
            prop_assert!(s.w1 <= s.w0);
            prop_assert_eq!(if z == 1 { s.w1 } else { s.w0 }, w);
        }
    }

    #[test]
    fn count_pmf_is_a_distribution(mean in -20.0f64..40.0, sigma in 0.01f64..30.0, big_j in 1u32..60) {
        let p = count_pmf_vec(mean, sigma, big_j).unwrap();
        prop_assert_eq!(p.len(), big_j as usize + 1);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rounding_is_monotone_and_in_range(a in -50.0f64..50.0, b in -50.0f64..50.0, big_j in 1u32..30) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(round_latent(lo, big_j) <= round_latent(hi, big_j));
        prop_assert!(round_latent(hi, big_j) <= big_j);
    }

    #[test]
    fn rhat_ignores_increasing_affine_maps(seed in any::<u64>(), scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chains: Vec<Vec<f64>> = (0..3).map(|c| (0..200).map(|_| rng.gen::<f64>() + 0.1 * c as f64).collect()).collect();
        let mapped: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|v| shift + scale * v).collect()).collect();
        let a = rhat(&ChainMatrix::new(chains).unwrap());
        let b = rhat(&ChainMatrix::new(mapped).unwrap());
        prop_assert!(a >= 1.0);
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn wald_identity_holds_for_any_binary_sample(seed in any::<u64>(), pz in 0.2f64..0.8, lift in 0.2f64..0.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 400;
        let z: Vec<f64> = (0..n).map(|_| rng.gen_bool(pz) as u8 as f64).collect();
        let w: Vec<f64> = z.iter().map(|&zi| rng.gen_bool(0.2 + lift * zi) as u8 as f64).collect();
        let y: Vec<f64> = w.iter().map(|&wi| rng.gen_bool(0.6 - 0.3 * wi) as u8 as f64).collect();
        let mean = |v: &[f64], arm: f64| {
            let s: Vec<f64> = v.iter().zip(&z).filter(|(_, &zi)| zi == arm).map(|(x, _)| *x).collect();
            s.iter().sum::<f64>() / s.len() as f64
        };
        let first = mean(&w, 1.0) - mean(&w, 0.0);
        prop_assume!(first.abs() > 0.05);
        let wald = (mean(&y, 1.0) - mean(&y, 0.0)) / first;
        let fit = fit_2sls(&y, &w, &z, &[], None).unwrap();
        prop_assert!((fit.estimate - wald).abs() < 1e-9 * wald.abs().max(1.0));
        prop_assert!(fit.lo <= fit.estimate && fit.estimate <= fit.hi);
    }

    #[test]
    fn summary_interval_brackets_the_median(draws in prop::collection::vec(-5.0f64..5.0, 2..300)) {
        let s = summarize("x", &draws).unwrap();
        let mut sorted = draws.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert!(s.lo <= s.hi);
        prop_assert!(s.lo >= sorted[0] && s.hi <= sorted[sorted.len() - 1]);
        prop_assert!(s.mean >= sorted[0] && s.mean <= sorted[sorted.len() - 1]);
    }
}
