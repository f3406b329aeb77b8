use std::collections::BTreeMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cluster::StationClustering;
use super::optim::{nelder_mead, NelderMeadConfig};
use super::CensoredNormal;
use crate::domain::EnsembleStats;
use crate::error::{Error, Result};
use crate::scores::crps_censored_normal;

/// Floor applied to the ensemble standard deviation before taking logs.
pub const SCALE_FLOOR: f64 = 1e-6;

const MIN_TRAINING_CASES: usize = 30;

/// Coefficients linking ensemble statistics to a censored normal:
/// `mu = g0 + g1 mean + g2 p0`, `sigma = exp(d0 + d1 log S)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmosParams {
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub delta0: f64,
    pub delta1: f64,
}

impl Default for EmosParams {
    fn default() -> Self {
        Self {
            gamma0: 0.0,
            gamma1: 1.0,
            gamma2: 0.0,
            delta0: 0.0,
            delta1: 1.0,
        }
    }
}

impl EmosParams {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.gamma0, self.gamma1, self.gamma2, self.delta0, self.delta1]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            gamma0: v[0],
            gamma1: v[1],
            gamma2: v[2],
            delta0: v[3],
            delta1: v[4],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

fn link_raw(params: &EmosParams, stats: &EnsembleStats) -> (f64, f64) {
    let s = stats.sd().max(SCALE_FLOOR);
    let mu = params.gamma0 + params.gamma1 * stats.mean + params.gamma2 * stats.zero_fraction;
    let sigma = (params.delta0 + params.delta1 * s.ln()).exp().clamp(1e-10, 1e10);
    (mu, sigma)
}

/// Predictive censored normal for one forecast case.
pub fn emos_link(params: &EmosParams, stats: &EnsembleStats) -> Result<CensoredNormal> {
    if !params.is_finite() {
        return Err(Error::invalid("EMOS parameters must be finite"));
    }
    if stats.variance <= 0.0 {
        warn!("ensemble variance is zero; scale floored at {SCALE_FLOOR}");
    }
    let (mu, sigma) = link_raw(params, stats);
    CensoredNormal::new(mu, sigma)
}

fn mean_crps(params: &EmosParams, cases: &[(EnsembleStats, f64)]) -> f64 {
    if !params.is_finite() {
        return f64::INFINITY;
    }
    let mut total = 0.0;
    for (stats, y) in cases {
        let (mu, sigma) = link_raw(params, stats);
        match crps_censored_normal(mu, sigma, *y) {
            Ok(v) => total += v,
            Err(_) => return f64::INFINITY,
        }
    }
    total / cases.len() as f64
}

#[derive(Clone, Copy, Debug)]
pub struct EmosFitConfig {
    pub restarts: usize,
    pub simplex: NelderMeadConfig,
    pub seed: u64,
}

impl Default for EmosFitConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            simplex: NelderMeadConfig::default(),
            seed: 0,
        }
    }
}

/// Minimum-CRPS estimation of EMOS coefficients.
///
/// The returned parameters never score worse on the training data than
/// `init`.
pub fn fit_emos(cases: &[(EnsembleStats, f64)], init: EmosParams, config: &EmosFitConfig) -> Result<EmosParams> {
    if cases.len() < MIN_TRAINING_CASES {
        return Err(Error::invalid(format!(
            "EMOS needs at least {MIN_TRAINING_CASES} training cases, got {}",
            cases.len()
        )));
    }
    if let Some((_, y)) = cases.iter().find(|(_, y)| !(*y >= 0.0)) {
        return Err(Error::invalid(format!("EMOS observation must be non-negative, got {y}")));
    }
    let (s0, y0) = cases[0];
    if cases.iter().all(|(s, y)| *s == s0 && *y == y0) {
        warn!("degenerate EMOS training set (identical cases); keeping initial parameters");
        return Ok(init);
    }

    let objective = |x: &[f64]| mean_crps(&EmosParams::from_slice(x), cases);
    let init_score = objective(&init.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let start_steps: Vec<f64> = init
        .to_vec()
        .iter()
        .map(|v| if v.abs() > 1e-3 { 0.25 * v.abs() } else { 0.25 })
        .collect();
    let mut best = nelder_mead(objective, &init.to_vec(), &start_steps, config.simplex);
    for _ in 0..config.restarts {
        let steps: Vec<f64> = best
            .x
            .iter()
            .map(|v| {
                let scale = rng.random_range(0.05..0.5) * v.abs().max(1.0);
                if rng.random_bool(0.5) {
                    scale
                } else {
                    -scale
                }
            })
            .collect();
        let run = nelder_mead(objective, &best.x, &steps, config.simplex);
        if run.value < best.value {
            best = run;
        }
    }
    if !(best.value <= init_score) {
        return Ok(init);
    }
    Ok(EmosParams::from_slice(&best.x))
}

/// One EMOS parameter set per station cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiLocalEmos {
    pub clustering: StationClustering,
    pub params: Vec<EmosParams>,
}

impl SemiLocalEmos {
    pub fn params_for(&self, station: &str) -> Result<&EmosParams> {
        let c = self.clustering.cluster_of(station)?;
        Ok(&self.params[c])
    }

    pub fn predictive(&self, station: &str, stats: &EnsembleStats) -> Result<CensoredNormal> {
        emos_link(self.params_for(station)?, stats)
    }
}

/// Fits one parameter set per cluster on the pooled data of its stations.
pub fn fit_semi_local(
    cases: &[(String, EnsembleStats, f64)],
    clustering: &StationClustering,
    init: EmosParams,
    config: &EmosFitConfig,
) -> Result<SemiLocalEmos> {
    let mut pooled: BTreeMap<usize, Vec<(EnsembleStats, f64)>> = BTreeMap::new();
    for (station, stats, y) in cases {
        let c = clustering.cluster_of(station)?;
        pooled.entry(c).or_default().push((*stats, *y));
    }
    let mut params = Vec::with_capacity(clustering.n_clusters);
    for c in 0..clustering.n_clusters {
        let data = pooled
            .get(&c)
            .ok_or_else(|| Error::invalid(format!("cluster {c} has no training data")))?;
        let cfg = EmosFitConfig {
            seed: config.seed.wrapping_add(c as u64),
            ..*config
        };
        params.push(fit_emos(data, init, &cfg)?);
    }
    Ok(SemiLocalEmos {
        clustering: clustering.clone(),
        params,
    })
}
