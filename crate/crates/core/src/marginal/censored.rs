use serde::{Deserialize, Serialize};

use super::sampling::Predictive;
use crate::error::{Error, Result};
use crate::scores::crps_censored_normal;
use crate::special::{norm_cdf, norm_pdf, norm_ppf};

/// Normal distribution left-censored at zero: all mass below 0 sits at 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensoredNormal {
    mu: f64,
    sigma: f64,
}

impl CensoredNormal {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::invalid(format!("censored normal location must be finite, got {mu}")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("censored normal scale must be positive, got {sigma}")));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            norm_cdf((x - self.mu) / self.sigma)
        }
    }

    /// Probability mass at zero.
    pub fn zero_mass(&self) -> f64 {
        self.cdf(0.0)
    }

    /// `mu Phi(mu/sigma) + sigma phi(mu/sigma)`.
    pub fn mean(&self) -> f64 {
        let r = self.mu / self.sigma;
        (self.mu * norm_cdf(r) + self.sigma * norm_pdf(r)).max(0.0)
    }

    pub fn crps(&self, y: f64) -> Result<f64> {
        crps_censored_normal(self.mu, self.sigma, y)
    }
}

impl Predictive for CensoredNormal {
    fn quantile(&self, level: f64) -> f64 {
        (self.mu + self.sigma * norm_ppf(level)).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cdf_examples() {
        let d = CensoredNormal::new(0.0, 1.0).unwrap();
        assert_eq!(d.cdf(-1.0), 0.0);
        assert_eq!(d.cdf(0.0), 0.5);
        assert_eq!(d.zero_mass(), 0.5);
        assert!((d.cdf(1e3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_examples() {
        let d = CensoredNormal::new(0.0, 1.0).unwrap();
        assert!((d.mean() - 0.398_942_3).abs() < 1e-7);
        assert!((CensoredNormal::new(10.0, 0.01).unwrap().mean() - 10.0).abs() < 1e-9);
        assert!(CensoredNormal::new(-10.0, 0.01).unwrap().mean().abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_scale() {
        assert!(CensoredNormal::new(0.0, 0.0).is_err());
        assert!(CensoredNormal::new(f64::NAN, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn mean_non_negative(mu in -50.0..50.0f64, sigma in 0.01..20.0f64) {
            prop_assert!(CensoredNormal::new(mu, sigma).unwrap().mean() >= 0.0);
        }

        #[test]
        fn cdf_monotone(mu in -5.0..5.0f64, sigma in 0.1..5.0f64, a in -3.0..10.0f64, b in -3.0..10.0f64) {
            let d = CensoredNormal::new(mu, sigma).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(d.cdf(lo) <= d.cdf(hi));
        }
    }
}
