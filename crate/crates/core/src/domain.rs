//! Shared domain types: stations, forecasts, observations, graphs and
//! deterministic ensemble statistics.

use std::collections::HashSet;

use chrono::{DateTime, Duration, Utc};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used for great-circle distances.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// An observation site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub elevation: f64,
}

impl Station {
    pub fn new(id: impl Into<String>, latitude: f64, longitude: f64, elevation: f64) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("station id must not be empty"));
        }
        if !(-90.0..=90.0).contains(&latitude) {
            return Err(Error::invalid(format!("station {id}: latitude {latitude} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&longitude) {
            return Err(Error::invalid(format!(
                "station {id}: longitude {longitude} outside [-180, 180]"
            )));
        }
        if !elevation.is_finite() {
            return Err(Error::invalid(format!("station {id}: elevation is not finite")));
        }
        Ok(Self {
            id,
            latitude,
            longitude,
            elevation,
        })
    }
}

/// A K-member forecast for one station, initialization and lead time.
///
/// Member order is preserved: it defines the raw-ensemble ranks used by
/// ensemble copula coupling.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleForecast {
    pub station_id: String,
    pub init_time: DateTime<Utc>,
    pub lead_time: u32,
    pub members: Vec<f64>,
}

impl EnsembleForecast {
    pub fn new(
        station_id: impl Into<String>,
        init_time: DateTime<Utc>,
        lead_time: u32,
        members: Vec<f64>,
    ) -> Result<Self> {
        let station_id = station_id.into();
        if members.is_empty() {
            return Err(Error::invalid(format!("forecast for {station_id} has no members")));
        }
        if members.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid(format!("forecast for {station_id} has a non-finite member")));
        }
        Ok(Self {
            station_id,
            init_time,
            lead_time,
            members,
        })
    }

    pub fn valid_time(&self) -> DateTime<Utc> {
        valid_time(self.init_time, self.lead_time)
    }
}

/// `init_time + lead_time` hours.
pub fn valid_time(init_time: DateTime<Utc>, lead_time: u32) -> DateTime<Utc> {
    init_time + Duration::hours(i64::from(lead_time))
}

/// A verifying observation. Missing values are absent records.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub station_id: String,
    pub valid_time: DateTime<Utc>,
    pub value: f64,
}

impl Observation {
    pub fn new(station_id: impl Into<String>, valid_time: DateTime<Utc>, value: f64) -> Result<Self> {
        let station_id = station_id.into();
        if !value.is_finite() || value < 0.0 {
            return Err(Error::invalid(format!(
                "observation at {station_id} must be finite and non-negative, got {value}"
            )));
        }
        Ok(Self {
            station_id,
            valid_time,
            value,
        })
    }
}

/// Forecasts at D stations for one initialization and lead time, with the
/// matching observation vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MultivariateCase {
    pub init_time: DateTime<Utc>,
    pub lead_time: u32,
    pub stations: Vec<String>,
    /// D x K, row d holds the members at station d.
    pub forecasts: Array2<f64>,
    pub observations: Array1<f64>,
}

impl MultivariateCase {
    pub fn new(
        init_time: DateTime<Utc>,
        lead_time: u32,
        stations: Vec<String>,
        forecasts: Array2<f64>,
        observations: Array1<f64>,
    ) -> Result<Self> {
        check_case_shapes(forecasts.view(), observations.view())?;
        if stations.len() != forecasts.nrows() {
            return Err(Error::mismatch(format!(
                "{} station ids for {} forecast rows",
                stations.len(),
                forecasts.nrows()
            )));
        }
        Ok(Self {
            init_time,
            lead_time,
            stations,
            forecasts,
            observations,
        })
    }

    pub fn dim(&self) -> usize {
        self.forecasts.nrows()
    }

    pub fn members(&self) -> usize {
        self.forecasts.ncols()
    }

    pub fn valid_time(&self) -> DateTime<Utc> {
        valid_time(self.init_time, self.lead_time)
    }
}

/// Validates a D x K forecast matrix against a D-vector of observations.
pub fn check_case_shapes(forecasts: ArrayView2<f64>, observations: ArrayView1<f64>) -> Result<()> {
    let (d, k) = forecasts.dim();
    if d == 0 || k == 0 {
        return Err(Error::invalid("forecast matrix must have at least one row and one member"));
    }
    if observations.len() != d {
        return Err(Error::mismatch(format!(
            "forecast has {d} dimensions, observation has {}",
            observations.len()
        )));
    }
    Ok(())
}

/// Great-circle distance in kilometers (haversine, R = 6371 km).
pub fn haversine_km(a: &Station, b: &Station) -> f64 {
    let (lat1, lat2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.longitude - a.longitude).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Undirected station graph with an edge wherever two stations are closer
/// than `threshold_km`.
#[derive(Clone, Debug, PartialEq)]
pub struct StationGraph {
    pub stations: Vec<Station>,
    /// Index pairs `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub threshold_km: f64,
}

impl StationGraph {
    pub fn num_nodes(&self) -> usize {
        self.stations.len()
    }

    /// Adjacency lists in node order.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.stations.len()];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Edge set expressed as sorted pairs of station ids.
    pub fn id_edges(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .edges
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (&self.stations[i].id, &self.stations[j].id);
                if a <= b {
                    (a.clone(), b.clone())
                } else {
                    (b.clone(), a.clone())
                }
            })
            .collect();
        out.sort();
        out
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }
}

/// Builds the distance-threshold station graph.
pub fn build_graph(stations: &[Station], threshold_km: f64) -> Result<StationGraph> {
    if !(threshold_km > 0.0) || !threshold_km.is_finite() {
        return Err(Error::invalid(format!("graph threshold must be positive, got {threshold_km}")));
    }
    if stations.is_empty() {
        return Err(Error::invalid("graph needs at least one station"));
    }
    let mut seen = HashSet::new();
    for s in stations {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::invalid(format!("duplicate station id {}", s.id)));
        }
    }
    let mut edges = Vec::new();
    for i in 0..stations.len() {
        for j in (i + 1)..stations.len() {
            if haversine_km(&stations[i], &stations[j]) < threshold_km {
                edges.push((i, j));
            }
        }
    }
    Ok(StationGraph {
        stations: stations.to_vec(),
        edges,
        threshold_km,
    })
}

/// Mean, variance (divisor K - 1) and fraction of exact zeros of an
/// ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub mean: f64,
    pub variance: f64,
    pub zero_fraction: f64,
}

impl EnsembleStats {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

pub fn ensemble_stats(members: &[f64]) -> Result<EnsembleStats> {
    if members.is_empty() {
        return Err(Error::invalid("ensemble statistics need at least one member"));
    }
    let k = members.len() as f64;
    let mean = members.iter().sum::<f64>() / k;
    let variance = if members.len() == 1 {
        0.0
    } else {
        members.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0)
    };
    let zeros = members.iter().filter(|&&m| m == 0.0).count() as f64;
    Ok(EnsembleStats {
        mean,
        variance,
        zero_fraction: zeros / k,
    })
}

/// Visibility reporting categories in meters: 0, 100..=5000 step 100,
/// 6000..=30000 step 1000, 35000..=70000 step 5000.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityCategories {
    values: Vec<f64>,
}

impl Default for VisibilityCategories {
    fn default() -> Self {
        Self::new()
    }
}

impl VisibilityCategories {
    pub const COUNT: usize = 84;
    pub const MAX: f64 = 70_000.0;

    pub fn new() -> Self {
        let mut values = vec![0.0];
        values.extend((1..=50).map(|i| f64::from(i) * 100.0));
        values.extend((6..=30).map(|i| f64::from(i) * 1000.0));
        values.extend((7..=14).map(|i| f64::from(i) * 5000.0));
        debug_assert_eq!(values.len(), Self::COUNT);
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest category not exceeding `value`.
    pub fn index_of(&self, value: f64) -> Result<usize> {
        if !(value >= 0.0) {
            return Err(Error::invalid(format!("visibility must be non-negative, got {value}")));
        }
        Ok(self.values.partition_point(|&c| c <= value) - 1)
    }
}

/// Rounds a visibility value down to its reporting category, capped at
/// 70 km.
pub fn discretize_visibility(value: f64) -> Result<f64> {
    let cats = VisibilityCategories::new();
    let idx = cats.index_of(value)?;
    Ok(cats.values()[idx])
}
