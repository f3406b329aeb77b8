//! Standard normal and logistic helpers.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use statrs::function::erf::{erfc, erfc_inv};

/// 1 / sqrt(2 pi)
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, accurate in both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Phi(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal quantile.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_and_quantile_agree() {
        for &p in &[1e-10, 0.001, 0.05, 0.3, 0.5, 0.77, 0.99, 1.0 - 1e-9] {
            let x = norm_ppf(p);
            let err = (norm_cdf(x) - p).abs() / p;
            assert!(err < 1e-9, "p={p} err={err}");
        }
        assert_eq!(norm_cdf(0.0), 0.5);
        let tail = norm_sf(10.0) / 7.619_853_024_160_526e-24 - 1.0;
        assert!(tail.abs() < 1e-9, "{tail}");
    }

    #[test]
    fn logistic_is_symmetric() {
        for &x in &[-40.0, -3.0, 0.0, 0.5, 25.0] {
            assert!((logistic(x) + logistic(-x) - 1.0).abs() < 1e-15);
        }
        assert_eq!(logistic(0.0), 0.5);
    }
}
