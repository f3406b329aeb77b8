use ndarray::{ArrayView1, ArrayView2};

use super::VsWeights;
use crate::domain::check_case_shapes;
use crate::error::{Error, Result};

/// Order of the variogram score used throughout unless configured.
pub const VS_DEFAULT_ORDER: f64 = 0.5;

fn column_distance(forecasts: &ArrayView2<f64>, a: usize, b: usize) -> f64 {
    forecasts
        .column(a)
        .iter()
        .zip(forecasts.column(b).iter())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Sample energy score of a D x K ensemble (members in columns).
pub fn energy_score(forecasts: ArrayView2<f64>, observation: ArrayView1<f64>) -> Result<f64> {
    check_case_shapes(forecasts, observation)?;
    let k = forecasts.ncols();
    let kf = k as f64;
    let mut to_obs = 0.0;
    for member in forecasts.columns() {
        to_obs += member
            .iter()
            .zip(observation.iter())
            .map(|(f, y)| (f - y).powi(2))
            .sum::<f64>()
            .sqrt();
    }
    let mut pairs = 0.0;
    for a in 0..k {
        for b in (a + 1)..k {
            pairs += column_distance(&forecasts, a, b);
        }
    }
    // Each unordered pair appears twice in the full double sum.
    Ok((to_obs / kf - pairs / (kf * kf)).max(0.0))
}

fn abs_pow(x: f64, p: f64) -> f64 {
    if p == 0.5 {
        x.abs().sqrt()
    } else {
        x.abs().powf(p)
    }
}

/// Variogram score of order `p`. `weights = None` means `omega_ij = 1`.
pub fn variogram_score(
    forecasts: ArrayView2<f64>,
    observation: ArrayView1<f64>,
    weights: Option<&VsWeights>,
    p: f64,
) -> Result<f64> {
    check_case_shapes(forecasts, observation)?;
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::invalid(format!("variogram order must be positive, got {p}")));
    }
    let (d, k) = forecasts.dim();
    if let Some(w) = weights {
        if w.dim() != d {
            return Err(Error::mismatch(format!("weights are {0}x{0}, case has {d} dimensions", w.dim())));
        }
    }
    let kf = k as f64;
    let mut total = 0.0;
    for i in 0..d {
        let row_i = forecasts.row(i);
        for j in (i + 1)..d {
            let w = match weights {
                Some(w) => w.get(i, j) + w.get(j, i),
                None => 2.0,
            };
            if w == 0.0 {
                continue;
            }
            let row_j = forecasts.row(j);
            let fc: f64 = row_i.iter().zip(row_j.iter()).map(|(a, b)| abs_pow(a - b, p)).sum::<f64>() / kf;
            let ob = abs_pow(observation[i] - observation[j], p);
            total += w * (ob - fc).powi(2);
        }
    }
    Ok(total)
}
