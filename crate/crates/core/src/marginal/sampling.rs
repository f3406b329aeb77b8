/// A predictive distribution with a quantile function.
pub trait Predictive {
    /// Smallest value whose CDF is at least `level`.
    fn quantile(&self, level: f64) -> f64;
}

/// Equidistant levels `k/(K+1)`, `k = 1..=K`.
pub fn quantile_levels(k: usize) -> Vec<f64> {
    (1..=k).map(|i| i as f64 / (k as f64 + 1.0)).collect()
}

/// Ascending sample of `k` equidistant quantiles.
pub fn sample_quantiles<P: Predictive + ?Sized>(dist: &P, k: usize) -> Vec<f64> {
    let mut out: Vec<f64> = quantile_levels(k).into_iter().map(|l| dist.quantile(l)).collect();
    // Guard against rounding in inverse CDFs.
    for i in 1..out.len() {
        if out[i] < out[i - 1] {
            out[i] = out[i - 1];
        }
    }
    out
}
