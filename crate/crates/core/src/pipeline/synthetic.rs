//! Synthetic station data with a known joint law.
//!
//! For each valid time a latent field `t = mu + tau L w` is drawn, where
//! `L L^T = C` is the exponential correlation of the stations. A forecast
//! for lead `l` sees `a = t + s L e` and its members are drawn from the
//! exact Gaussian posterior of `t` given `a`,
//!
//! ```text
//! centre = mu + r (a - mu),   r = tau^2 / (tau^2 + s^2),
//! spread = tau s / sqrt(tau^2 + s^2),
//! member = centre + bias + dispersion * spread * L z,
//! ```
//!
//! so with `bias = 0` and `dispersion = 1` the observation and the members
//! are exchangeable. Observations and members are then clipped at zero
//! (and optionally discretised to visibility categories).

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::io::Dataset;
use crate::domain::{discretize_visibility, haversine_km, EnsembleForecast, Observation, Station};
use crate::error::{Error, Result};

const KM_PER_DEGREE: f64 = 111.194_926_644_558_73;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub stations: usize,
    /// Explicit `[lat, lon]` pairs; overrides random placement.
    pub coordinates: Option<Vec<[f64; 2]>>,
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Side of the square in which stations are placed at random.
    pub domain_km: f64,
    pub correlation_length_km: f64,
    pub days: usize,
    pub start: NaiveDate,
    pub lead_times: Vec<u32>,
    pub members: usize,
    pub climatology_mean: f64,
    /// Standard deviation of fixed per-station offsets.
    pub station_spread: f64,
    /// Amplitude of a cosine in the valid hour peaking at 12 UTC.
    pub diurnal_amplitude: f64,
    pub signal_sd: f64,
    pub error_sd: f64,
    /// Relative growth of the forecast error per 24 h of lead time.
    pub lead_growth: f64,
    /// Log-scale standard deviation of a per-case error multiplier.
    pub spread_variability: f64,
    pub bias: f64,
    pub dispersion: f64,
    pub discretize_visibility: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            stations: 10,
            coordinates: None,
            origin_lat: 47.0,
            origin_lon: 10.0,
            domain_km: 300.0,
            correlation_length_km: 100.0,
            days: 500,
            start: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            lead_times: vec![24],
            members: 8,
            climatology_mean: 10.0,
            station_spread: 1.0,
            diurnal_amplitude: 0.0,
            signal_sd: 3.0,
            error_sd: 1.0,
            lead_growth: 0.0,
            spread_variability: 0.3,
            bias: 0.0,
            dispersion: 1.0,
            discretize_visibility: false,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dispersion", self.dispersion),
            ("signal_sd", self.signal_sd),
            ("error_sd", self.error_sd),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("synthetic {name} must be positive, got {v}")));
            }
        }
        if self.correlation_length_km < 0.0 || self.lead_growth < 0.0 || self.spread_variability < 0.0 {
            return Err(Error::Config("synthetic length scales and growth rates must be non-negative".into()));
        }
        if self.members == 0 || self.days == 0 || self.lead_times.is_empty() {
            return Err(Error::Config("synthetic data needs members, days and lead times".into()));
        }
        let d = self.coordinates.as_ref().map_or(self.stations, Vec::len);
        if d == 0 {
            return Err(Error::Config("synthetic data needs at least one station".into()));
        }
        Ok(())
    }

    fn place_stations<R: Rng>(&self, rng: &mut R) -> Result<Vec<Station>> {
        let coords: Vec<[f64; 2]> = match &self.coordinates {
            Some(c) => c.clone(),
            None => (0..self.stations)
                .map(|_| {
                    let dy = rng.random::<f64>() * self.domain_km;
                    let dx = rng.random::<f64>() * self.domain_km;
                    let lat = self.origin_lat + dy / KM_PER_DEGREE;
                    let lon = self.origin_lon + dx / (KM_PER_DEGREE * lat.to_radians().cos());
                    [lat, lon]
                })
                .collect(),
        };
        coords
            .iter()
            .enumerate()
            .map(|(i, [lat, lon])| Station::new(format!("S{:03}", i + 1), *lat, *lon, rng.random::<f64>() * 1500.0))
            .collect()
    }
}

/// Lower Cholesky factor of the exponential correlation matrix.
pub fn correlation_factor(stations: &[Station], length_km: f64) -> Result<DMatrix<f64>> {
    let d = stations.len();
    if length_km == 0.0 {
        return Ok(DMatrix::identity(d, d));
    }
    let c = DMatrix::from_fn(d, d, |i, j| (-haversine_km(&stations[i], &stations[j]) / length_km).exp());
    c.cholesky()
        .map(|ch| ch.l())
        .ok_or_else(|| Error::invalid("station correlation matrix is not positive definite (duplicate coordinates?)"))
}

fn field<R: Rng>(l: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(l.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    l * z
}

fn finish(v: f64, discretize: bool) -> Result<f64> {
    let v = v.max(0.0);
    if discretize {
        discretize_visibility(v)
    } else {
        Ok(v)
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let stations = spec.place_stations(&mut rng)?;
    let d = stations.len();
    let l = correlation_factor(&stations, spec.correlation_length_km)?;
    let offsets: Vec<f64> = (0..d)
        .map(|_| spec.station_spread * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let tau = spec.signal_sd;

    let clim = |valid: DateTime<Utc>, i: usize| {
        let hour = f64::from(valid.hour());
        spec.climatology_mean + offsets[i] + spec.diurnal_amplitude * (2.0 * std::f64::consts::PI * (hour - 12.0) / 24.0).cos()
    };

    let mut truth: BTreeMap<DateTime<Utc>, DVector<f64>> = BTreeMap::new();
    let mut forecasts = Vec::with_capacity(spec.days * spec.lead_times.len() * d);
    for day in 0..spec.days {
        let date = spec.start + Duration::days(day as i64);
        let init = date.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
        for &lead in &spec.lead_times {
            let valid = init + Duration::hours(i64::from(lead));
            let t = truth
                .entry(valid)
                .or_insert_with(|| {
                    let w = field(&l, &mut rng);
                    DVector::from_fn(d, |i, _| clim(valid, i) + tau * w[i])
                })
                .clone();
            let mult = (spec.spread_variability * rng.sample::<f64, _>(StandardNormal)).exp();
            let s = spec.error_sd * (1.0 + spec.lead_growth * f64::from(lead) / 24.0) * mult;
            let e = field(&l, &mut rng);
            let r = tau * tau / (tau * tau + s * s);
            let spread = tau * s / (tau * tau + s * s).sqrt();
            let centre: Vec<f64> = (0..d)
                .map(|i| {
                    let mu = clim(valid, i);
                    mu + r * (t[i] + s * e[i] - mu)
                })
                .collect();
            let mut members = vec![Vec::with_capacity(spec.members); d];
            for _ in 0..spec.members {
                let z = field(&l, &mut rng);
                for i in 0..d {
                    let v = centre[i] + spec.bias + spec.dispersion * spread * z[i];
                    members[i].push(finish(v, spec.discretize_visibility)?);
                }
            }
            for (i, m) in members.into_iter().enumerate() {
                forecasts.push(EnsembleForecast::new(stations[i].id.clone(), init, lead, m)?);
            }
        }
    }
    let mut observations = Vec::with_capacity(truth.len() * d);
    for (valid, t) in &truth {
        for (i, st) in stations.iter().enumerate() {
            observations.push(Observation::new(st.id.clone(), *valid, finish(t[i], spec.discretize_visibility)?)?);
        }
    }
    Ok(Dataset {
        stations,
        forecasts,
        observations,
        extra: BTreeMap::new(),
    })
}
