use serde::{Deserialize, Serialize};

use super::ScoreSeries;
use crate::error::{Error, Result};
use crate::special::norm_sf;

/// Estimator of the standard deviation of score differences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmVariance {
    /// Sample standard deviation of the per-case differences.
    #[default]
    Sample,
    /// Bartlett lag-window long-run estimator with the given maximum lag.
    Bartlett { max_lag: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub t_statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub mean_diff: f64,
}

/// Diebold–Mariano test on `scores_f - scores_ref`. Negative statistics
/// favor `scores_f`; the p-value is two-sided under a standard normal.
pub fn dm_test(scores_f: &ScoreSeries, scores_ref: &ScoreSeries, variance: DmVariance) -> Result<DmResult> {
    if scores_f.len() != scores_ref.len() {
        return Err(Error::mismatch(format!(
            "score series lengths differ: {} vs {}",
            scores_f.len(),
            scores_ref.len()
        )));
    }
    if scores_f.keys != scores_ref.keys {
        return Err(Error::mismatch("score series case keys are not aligned"));
    }
    let n = scores_f.len();
    if n < 2 {
        return Err(Error::invalid("Diebold-Mariano test needs at least two cases"));
    }
    let d: Vec<f64> = scores_f.values.iter().zip(&scores_ref.values).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let sd = match variance {
        DmVariance::Sample => (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt(),
        DmVariance::Bartlett { max_lag } => {
            let autocov = |lag: usize| -> f64 {
                (lag..n).map(|i| (d[i] - mean) * (d[i - lag] - mean)).sum::<f64>() / nf
            };
            let lags = max_lag.min(n - 1);
            let mut lr = autocov(0);
            for lag in 1..=lags {
                lr += 2.0 * (1.0 - lag as f64 / (lags as f64 + 1.0)) * autocov(lag);
            }
            lr.max(0.0).sqrt()
        }
    };
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Degenerate(
            "score differences have zero variance; Diebold-Mariano statistic undefined".to_string(),
        ));
    }
    let t = mean / (sd / nf.sqrt());
    Ok(DmResult {
        t_statistic: t,
        p_value: (2.0 * norm_sf(t.abs())).min(1.0),
        n,
        mean_diff: mean,
    })
}

/// Benjamini–Hochberg step-up decisions (`true` = reject), in input order.
pub fn benjamini_hochberg(p_values: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("FDR level must lie in (0, 1), got {alpha}")));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let cutoff = order
        .iter()
        .enumerate()
        .filter(|&(rank, &idx)| p_values[idx] <= (rank + 1) as f64 / m as f64 * alpha)
        .map(|(_, &idx)| p_values[idx])
        .last();
    Ok(match cutoff {
        Some(c) => p_values.iter().map(|&p| p <= c).collect(),
        None => vec![false; m],
    })
}
