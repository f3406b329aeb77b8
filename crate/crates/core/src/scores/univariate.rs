use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_pdf, norm_sf};

/// 1 / sqrt(pi)
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Sample CRPS of an ensemble against a scalar observation.
///
/// Uses the sorted-sample identity
/// `sum_k sum_l |x_k - x_l| = 2 sum_i (2i - K - 1) x_(i)`, so the cost is
/// `O(K log K)`.
pub fn crps_sample(members: &[f64], y: f64) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::invalid("CRPS of an empty ensemble"));
    }
    let k = members.len();
    let kf = k as f64;
    let abs_err = members.iter().map(|&f| (f - y).abs()).sum::<f64>() / kf;
    let mut sorted = members.to_vec();
    sorted.sort_by(f64::total_cmp);
    let spread: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * (i as f64 + 1.0) - kf - 1.0) * x)
        .sum();
    Ok((abs_err - spread / (kf * kf)).max(0.0))
}

/// Closed-form CRPS of a normal distribution left-censored at zero.
///
/// With `l = -mu/sigma` and `z = (y - mu)/sigma`,
/// `CRPS / sigma = z(2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi)
///               - [l Phi(l)^2 + 2 Phi(l) phi(l) - Phi(sqrt(2) l)/sqrt(pi)]`,
/// where the bracket is the integral of `Phi^2` up to `l`. When `l > 0` the
/// expression is rewritten with upper tails to avoid cancellation.
pub fn crps_censored_normal(mu: f64, sigma: f64, y: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("censored normal scale must be positive, got {sigma}")));
    }
    if !(y >= 0.0) {
        return Err(Error::invalid(format!("observation must be non-negative, got {y}")));
    }
    if !mu.is_finite() || !y.is_finite() {
        return Err(Error::invalid("non-finite location or observation"));
    }
    let l = -mu / sigma;
    let z = (y - mu) / sigma;
    let value = if l <= 0.0 {
        let (cz, cl) = (norm_cdf(z), norm_cdf(l));
        z * (2.0 * cz - 1.0) + 2.0 * norm_pdf(z) - FRAC_1_SQRT_PI - l * cl * cl - 2.0 * cl * norm_pdf(l)
            + norm_cdf(SQRT_2 * l) * FRAC_1_SQRT_PI
    } else {
        let (qz, ql) = (norm_sf(z), norm_sf(l));
        (z - l) - 2.0 * z * qz + 2.0 * l * ql - l * ql * ql + 2.0 * norm_pdf(z) - 2.0 * norm_pdf(l)
            + 2.0 * ql * norm_pdf(l)
            - norm_sf(SQRT_2 * l) * FRAC_1_SQRT_PI
    };
    Ok((sigma * value).max(0.0))
}

/// `1 - mean_score / mean_ref_score`.
pub fn skill_score(mean_score: f64, mean_ref_score: f64) -> Result<f64> {
    if mean_ref_score == 0.0 {
        return Err(Error::Degenerate(
            "skill score undefined: reference mean score is zero".to_string(),
        ));
    }
    if !mean_score.is_finite() || !mean_ref_score.is_finite() {
        return Err(Error::invalid("skill score of non-finite mean scores"));
    }
    Ok(1.0 - mean_score / mean_ref_score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn crps_sample_examples() {
        assert_eq!(crps_sample(&[1.5], 1.5).unwrap(), 0.0);
        assert!((crps_sample(&[0.0, 2.0], 1.0).unwrap() - 0.5).abs() < 1e-15);
        let c = 3.25;
        assert!((crps_sample(&[c, c, c], 1.0).unwrap() - 2.25).abs() < 1e-15);
        assert!(crps_sample(&[], 0.0).is_err());
    }

    #[test]
    fn censored_crps_degenerate_and_monotone() {
        for &sigma in &[0.1, 1.0, 7.0] {
            let v = crps_censored_normal(-50.0 * sigma, sigma, 0.0).unwrap();
            assert!(v < 1e-6, "sigma={sigma}: {v}");
        }
        let at1 = crps_censored_normal(0.0, 1.0, 1.0).unwrap();
        let at3 = crps_censored_normal(0.0, 1.0, 3.0).unwrap();
        assert!(at3 > at1);
    }

    #[test]
    fn censored_crps_rejects_bad_input() {
        assert!(crps_censored_normal(0.0, 0.0, 1.0).is_err());
        assert!(crps_censored_normal(0.0, -1.0, 1.0).is_err());
        assert!(crps_censored_normal(0.0, 1.0, -0.5).is_err());
    }

    #[test]
    fn censored_crps_branches_agree_near_zero_location() {
        // l just either side of 0 must give continuous results.
        let a = crps_censored_normal(1e-9, 1.0, 0.7).unwrap();
        let b = crps_censored_normal(-1e-9, 1.0, 0.7).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn censored_crps_uncensored_limit_matches_gaussian() {
        // mu >> sigma: censoring is irrelevant, Gaussian CRPS applies.
        let (mu, sigma, y) = (40.0, 2.0, 41.0);
        let z: f64 = (y - mu) / sigma;
        let gauss = sigma * (z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z) - 1.0 / std::f64::consts::PI.sqrt());
        assert!((crps_censored_normal(mu, sigma, y).unwrap() - gauss).abs() < 1e-12);
    }

    #[test]
    fn skill_score_examples() {
        assert_eq!(skill_score(1.3, 1.3).unwrap(), 0.0);
        assert_eq!(skill_score(0.5, 1.0).unwrap(), 0.5);
        assert_eq!(skill_score(2.0, 1.0).unwrap(), -1.0);
        assert!(matches!(skill_score(1.0, 0.0), Err(Error::Degenerate(_))));
    }

    proptest! {
        #[test]
        fn crps_permutation_invariant(mut m in prop::collection::vec(-10.0..10.0f64, 1..15), y in -10.0..10.0f64) {
            let a = crps_sample(&m, y).unwrap();
            m.reverse();
            m.rotate_left(1);
            let b = crps_sample(&m, y).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn skill_antitone(ref_score in 0.1..10.0f64, a in 0.0..10.0f64, b in 0.0..10.0f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(skill_score(lo, ref_score).unwrap() >= skill_score(hi, ref_score).unwrap());
        }
    }
}
