//! Verification metrics for ensemble and parametric forecasts.

mod interval;
mod multivariate;
mod rank;
mod significance;
mod univariate;

use chrono::{DateTime, Utc};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use interval::{central_interval, full_range_level, interval_summary, sample_quantile, IntervalSummary};
pub use multivariate::{energy_score, variogram_score, VS_DEFAULT_ORDER};
pub use rank::{
    chi_square_uniformity, pre_rank, rank_histogram, rank_histogram_cases, reliability_index, PreRankKind,
    RankHistogram,
};
pub use significance::{benjamini_hochberg, dm_test, DmResult, DmVariance};
pub use univariate::{crps_censored_normal, crps_sample, skill_score};

/// Identifies one verification case.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CaseKey {
    pub init_time: DateTime<Utc>,
    pub lead_time: u32,
    pub station: Option<String>,
}

/// One score value per case.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSeries {
    pub keys: Vec<CaseKey>,
    pub values: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(keys: Vec<CaseKey>, values: Vec<f64>) -> Result<Self> {
        if keys.len() != values.len() {
            return Err(Error::mismatch(format!("{} keys for {} scores", keys.len(), values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("score series contains non-finite value {v}")));
        }
        Ok(Self { keys, values })
    }

    /// Series without case keys, aligned by position only.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self { keys: Vec::new(), values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Pair weights of the variogram score.
#[derive(Clone, Debug, PartialEq)]
pub struct VsWeights {
    omega: Array2<f64>,
}

impl VsWeights {
    /// `omega_ij = 1` for every pair.
    pub fn uniform(dim: usize) -> Self {
        Self {
            omega: Array2::ones((dim, dim)),
        }
    }

    pub fn new(omega: Array2<f64>) -> Result<Self> {
        let (r, c) = omega.dim();
        if r != c {
            return Err(Error::mismatch(format!("weight matrix must be square, got {r}x{c}")));
        }
        for i in 0..r {
            for j in 0..c {
                let w = omega[[i, j]];
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(Error::invalid(format!("weight ({i},{j}) = {w} must be finite and >= 0")));
                }
                if (w - omega[[j, i]]).abs() > 1e-12 * w.abs().max(1.0) {
                    return Err(Error::invalid(format!("weight matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { omega })
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.omega[[i, j]]
    }
}
