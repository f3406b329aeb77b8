use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::sample_quantile;

/// Assignment of stations to EMOS clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationClustering {
    pub assignment: BTreeMap<String, usize>,
    pub n_clusters: usize,
}

impl StationClustering {
    /// All stations in one cluster (global estimation).
    pub fn single(stations: impl IntoIterator<Item = String>) -> Self {
        Self {
            assignment: stations.into_iter().map(|s| (s, 0)).collect(),
            n_clusters: 1,
        }
    }

    pub fn cluster_of(&self, station: &str) -> Result<usize> {
        self.assignment
            .get(station)
            .copied()
            .ok_or_else(|| Error::invalid(format!("station {station} has no cluster")))
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &c in self.assignment.values() {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Station descriptor for clustering: ten equidistant climatological
/// quantiles of the observations followed by the mean absolute error of
/// the ensemble mean.
pub fn climatology_features(observations: &[f64], ensemble_means: &[f64]) -> Result<Vec<f64>> {
    if observations.is_empty() || observations.len() != ensemble_means.len() {
        return Err(Error::mismatch(
            "climatology features need equally many (non-zero) observations and ensemble means",
        ));
    }
    let mut sorted = observations.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = (1..=10).map(|i| sample_quantile(&sorted, i as f64 / 11.0)).collect();
    let mae = observations
        .iter()
        .zip(ensemble_means)
        .map(|(y, m)| (y - m).abs())
        .sum::<f64>()
        / observations.len() as f64;
    out.push(mae);
    Ok(out)
}

fn standardize(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = features.len() as f64;
    let dim = features[0].len();
    let mut out = features.to_vec();
    for j in 0..dim {
        let mean = features.iter().map(|f| f[j]).sum::<f64>() / n;
        let sd = (features.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for row in &mut out {
            row[j] = if sd > 0.0 { (row[j] - mean) / sd } else { 0.0 };
        }
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    (0..centroids.len())
        .min_by(|&a, &b| sq_dist(point, &centroids[a]).total_cmp(&sq_dist(point, &centroids[b])))
        .unwrap_or(0)
}

fn centroids_of(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

fn cluster_counts(labels: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    counts
}

/// Lloyd iterations from k-means++ seeding. Returns labels and inertia.
fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[nearest(p, &centroids)])).collect();
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &di) in d.iter().enumerate() {
                if u < di {
                    pick = i;
                    break;
                }
                u -= di;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
    }
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..100 {
        let fresh = centroids_of(points, &labels, k);
        // Clusters that emptied out keep their previous centroid.
        for (c, (f, members)) in centroids.iter_mut().zip(fresh.into_iter().zip(cluster_counts(&labels, k))) {
            if members > 0 {
                *c = f;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum();
    (labels, inertia)
}

/// Merges clusters with fewer than two members into the cluster with the
/// nearest centroid, then relabels by order of first appearance.
fn enforce_min_size(points: &[Vec<f64>], mut labels: Vec<usize>, k: usize) -> Vec<usize> {
    loop {
        let counts = cluster_counts(&labels, k);
        let Some(small) = (0..k).find(|&c| counts[c] == 1) else {
            break;
        };
        let centroids = centroids_of(points, &labels, k);
        let target = (0..k)
            .filter(|&c| c != small && counts[c] > 0)
            .min_by(|&a, &b| {
                sq_dist(&centroids[small], &centroids[a]).total_cmp(&sq_dist(&centroids[small], &centroids[b]))
            });
        match target {
            Some(t) => labels.iter_mut().filter(|l| **l == small).for_each(|l| *l = t),
            None => break,
        }
    }
    let mut remap = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = remap.len();
            *remap.entry(l).or_insert(next)
        })
        .collect()
}

/// k-means clustering of stations on standardized descriptors such that
/// every cluster holds at least two stations.
pub fn cluster_stations(features: &[(String, Vec<f64>)], n_clusters: usize, seed: u64) -> Result<StationClustering> {
    if n_clusters < 1 {
        return Err(Error::invalid("number of clusters must be at least 1"));
    }
    if features.is_empty() {
        return Err(Error::invalid("no stations to cluster"));
    }
    if n_clusters > 1 && n_clusters > features.len() / 2 {
        return Err(Error::invalid(format!(
            "{n_clusters} clusters cannot each hold two of {} stations",
            features.len()
        )));
    }
    let dim = features[0].1.len();
    if features.iter().any(|(_, f)| f.len() != dim || f.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("station descriptors must be finite and of equal length"));
    }
    if n_clusters == 1 {
        return Ok(StationClustering::single(features.iter().map(|(s, _)| s.clone())));
    }

    let points = standardize(&features.iter().map(|(_, f)| f.clone()).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_valid: Option<(Vec<usize>, f64)> = None;
    let mut best_any: Option<(Vec<usize>, f64)> = None;
    for _ in 0..20 {
        let (labels, inertia) = kmeans(&points, n_clusters, &mut rng);
        let counts = cluster_counts(&labels, n_clusters);
        let valid = counts.iter().all(|&c| c >= 2);
        let slot = if valid { &mut best_valid } else { &mut best_any };
        if slot.as_ref().is_none_or(|(_, b)| inertia < *b) {
            *slot = Some((labels, inertia));
        }
    }
    let labels = match (best_valid, best_any) {
        (Some((l, _)), _) => l,
        (None, Some((l, _))) => l,
        (None, None) => unreachable!("at least one k-means run"),
    };
    let labels = enforce_min_size(&points, labels, n_clusters);
    let n = labels.iter().copied().max().map_or(1, |m| m + 1);
    Ok(StationClustering {
        assignment: features.iter().map(|(s, _)| s.clone()).zip(labels).collect(),
        n_clusters: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted(n_per: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for g in 0..2 {
            for i in 0..n_per {
                let base = if g == 0 { 0.0 } else { 10.0 };
                let f = (0..3).map(|_| base + rng.random_range(-1.0..1.0)).collect();
                out.push((format!("g{g}s{i}"), f));
            }
        }
        out
    }

    #[test]
    fn single_cluster_is_global() {
        let c = cluster_stations(&planted(3, 1), 1, 0).unwrap();
        assert_eq!(c.n_clusters, 1);
        assert!(c.assignment.values().all(|&v| v == 0));
    }

    #[test]
    fn recovers_planted_partition() {
        let f = planted(6, 7);
        let c = cluster_stations(&f, 2, 3).unwrap();
        assert_eq!(c.n_clusters, 2);
        let g0 = c.cluster_of("g0s0").unwrap();
        for (id, _) in &f {
            let expect_same = id.starts_with("g0");
            assert_eq!(c.cluster_of(id).unwrap() == g0, expect_same, "{id}");
        }
    }

    #[test]
    fn eighteen_stations_three_clusters_min_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut f: Vec<(String, Vec<f64>)> = (0..17)
            .map(|i| (format!("s{i}"), (0..11).map(|_| rng.random_range(0.0..1.0)).collect()))
            .collect();
        // One far outlier that k-means would like to isolate.
        f.push(("outlier".into(), vec![50.0; 11]));
        let c = cluster_stations(&f, 3, 5).unwrap();
        assert_eq!(c.assignment.len(), 18);
        assert!(c.sizes().iter().all(|&s| s >= 2), "{:?}", c.sizes());
    }

    #[test]
    fn rejects_bad_cluster_counts() {
        let f = planted(2, 1);
        assert!(cluster_stations(&f, 0, 0).is_err());
        assert!(cluster_stations(&f, 3, 0).is_err());
    }

    #[test]
    fn climatology_descriptor_shape() {
        let obs: Vec<f64> = (0..100).map(f64::from).collect();
        let means: Vec<f64> = obs.iter().map(|y| y + 2.0).collect();
        let f = climatology_features(&obs, &means).unwrap();
        assert_eq!(f.len(), 11);
        assert!(f[..10].windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(f[10], 2.0);
    }
}
