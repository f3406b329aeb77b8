use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::domain::{check_case_shapes, MultivariateCase};
use crate::error::{Error, Result};

/// Pre-rank function condensing a multivariate vector into a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreRankKind {
    Average,
    BandDepth,
    EnergyScore,
    Dependence,
}

impl PreRankKind {
    pub const ALL: [PreRankKind; 4] = [
        PreRankKind::Average,
        PreRankKind::BandDepth,
        PreRankKind::EnergyScore,
        PreRankKind::Dependence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PreRankKind::Average => "average",
            PreRankKind::BandDepth => "band_depth",
            PreRankKind::EnergyScore => "energy_score",
            PreRankKind::Dependence => "dependence",
        }
    }
}

impl fmt::Display for PreRankKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PreRankKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PreRankKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown pre-rank kind '{s}'")))
    }
}

/// Pooled set: observation at index 0, members at 1..=K.
fn pooled(forecasts: &ArrayView2<f64>, observation: &ArrayView1<f64>, element: usize, dim: usize) -> f64 {
    if element == 0 {
        observation[dim]
    } else {
        forecasts[[dim, element - 1]]
    }
}

/// 1-based ranks with ties replaced by their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn univariate_ranks(forecasts: &ArrayView2<f64>, observation: &ArrayView1<f64>) -> Vec<Vec<f64>> {
    let (d, k) = forecasts.dim();
    (0..d)
        .map(|dim| {
            let values: Vec<f64> = (0..=k).map(|e| pooled(forecasts, observation, e, dim)).collect();
            average_ranks(&values)
        })
        .collect()
}

/// Pre-ranks of the pooled set, observation first.
///
/// Score-based kinds score every pooled element against the remaining K
/// vectors taken as the ensemble: the energy score for
/// [`PreRankKind::EnergyScore`], the variogram score (order 0.5, unit
/// weights) for [`PreRankKind::Dependence`].
pub fn pre_rank(forecasts: ArrayView2<f64>, observation: ArrayView1<f64>, kind: PreRankKind) -> Result<Vec<f64>> {
    check_case_shapes(forecasts, observation)?;
    let (d, k) = forecasts.dim();
    let n = k + 1;
    let out = match kind {
        PreRankKind::Average => {
            let ranks = univariate_ranks(&forecasts, &observation);
            (0..n)
                .map(|e| ranks.iter().map(|r| r[e]).sum::<f64>() / d as f64)
                .collect()
        }
        PreRankKind::BandDepth => {
            let ranks = univariate_ranks(&forecasts, &observation);
            let nf = n as f64;
            (0..n)
                .map(|e| ranks.iter().map(|r| (nf - r[e]) * (r[e] - 1.0)).sum())
                .collect()
        }
        PreRankKind::EnergyScore => {
            let mut dist = vec![0.0; n * n];
            for a in 0..n {
                for b in (a + 1)..n {
                    let s: f64 = (0..d)
                        .map(|dim| (pooled(&forecasts, &observation, a, dim) - pooled(&forecasts, &observation, b, dim)).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    dist[a * n + b] = s;
                    dist[b * n + a] = s;
                }
            }
            let rows: Vec<f64> = (0..n).map(|a| dist[a * n..(a + 1) * n].iter().sum()).collect();
            let total: f64 = rows.iter().sum();
            let m = (n - 1) as f64;
            rows.iter()
                .map(|&row| row / m - (total - 2.0 * row) / (2.0 * m * m))
                .collect()
        }
        PreRankKind::Dependence => {
            let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).collect();
            let g: Vec<Vec<f64>> = (0..n)
                .map(|e| {
                    pairs
                        .iter()
                        .map(|&(i, j)| {
                            (pooled(&forecasts, &observation, e, i) - pooled(&forecasts, &observation, e, j))
                                .abs()
                                .sqrt()
                        })
                        .collect()
                })
                .collect();
            let totals: Vec<f64> = (0..pairs.len()).map(|p| g.iter().map(|ge| ge[p]).sum()).collect();
            let m = (n - 1) as f64;
            g.iter()
                .map(|ge| {
                    2.0 * ge
                        .iter()
                        .zip(&totals)
                        .map(|(&x, &t)| (x - (t - x) / m).powi(2))
                        .sum::<f64>()
                })
                .collect()
        }
    };
    Ok(out)
}

/// Reliability index `sum_k |p_k - 1/(K+1)|` of histogram counts.
pub fn reliability_index(bins: &[u64]) -> f64 {
    let total: u64 = bins.iter().sum();
    if total == 0 || bins.is_empty() {
        return 0.0;
    }
    let expected = 1.0 / bins.len() as f64;
    bins.iter()
        .map(|&c| (c as f64 / total as f64 - expected).abs())
        .sum()
}

/// Pearson chi-square test of uniform bin probabilities. Returns the
/// statistic and its upper-tail p-value.
pub fn chi_square_uniformity(bins: &[u64]) -> Result<(f64, f64)> {
    if bins.len() < 2 {
        return Err(Error::invalid("chi-square test needs at least two bins"));
    }
    let total: u64 = bins.iter().sum();
    if total == 0 {
        return Err(Error::invalid("chi-square test on an empty histogram"));
    }
    let expected = total as f64 / bins.len() as f64;
    let stat: f64 = bins.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((bins.len() - 1) as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok((stat, dist.sf(stat)))
}

/// Rank histogram of observation ranks among pooled pre-ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub pre_rank_kind: PreRankKind,
    pub bins: Vec<u64>,
    pub reliability_index: f64,
}

impl RankHistogram {
    pub fn from_bins(pre_rank_kind: PreRankKind, bins: Vec<u64>) -> Self {
        let reliability_index = reliability_index(&bins);
        Self {
            pre_rank_kind,
            bins,
            reliability_index,
        }
    }

    pub fn cases(&self) -> u64 {
        self.bins.iter().sum()
    }

    /// Relative bin frequencies.
    pub fn frequencies(&self) -> Vec<f64> {
        let total = self.cases().max(1) as f64;
        self.bins.iter().map(|&c| c as f64 / total).collect()
    }
}

/// 0-based rank of element 0 among `pre_ranks`, ties broken uniformly.
fn observation_rank<R: Rng>(pre_ranks: &[f64], rng: &mut R) -> usize {
    let obs = pre_ranks[0];
    let below = pre_ranks[1..].iter().filter(|&&v| v < obs).count();
    let ties = pre_ranks[1..].iter().filter(|&&v| v == obs).count();
    below + rng.random_range(0..=ties)
}

/// Builds a rank histogram over cases sharing one ensemble size.
pub fn rank_histogram<'a, I>(cases: I, kind: PreRankKind, seed: u64) -> Result<RankHistogram>
where
    I: IntoIterator<Item = (ArrayView2<'a, f64>, ArrayView1<'a, f64>)>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bins: Option<Vec<u64>> = None;
    for (forecasts, observation) in cases {
        let k = forecasts.ncols();
        let counts = bins.get_or_insert_with(|| vec![0; k + 1]);
        if counts.len() != k + 1 {
            return Err(Error::mismatch(format!(
                "rank histogram needs a common ensemble size: {} vs {k}",
                counts.len() - 1
            )));
        }
        let pr = pre_rank(forecasts, observation, kind)?;
        counts[observation_rank(&pr, &mut rng)] += 1;
    }
    let bins = bins.ok_or_else(|| Error::invalid("rank histogram over zero cases"))?;
    Ok(RankHistogram::from_bins(kind, bins))
}

pub fn rank_histogram_cases(cases: &[MultivariateCase], kind: PreRankKind, seed: u64) -> Result<RankHistogram> {
    rank_histogram(
        cases.iter().map(|c| (c.forecasts.view(), c.observations.view())),
        kind,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::{energy_score, variogram_score};
    use ndarray::{array, Array1, Array2, Axis};
    use proptest::prelude::*;

    #[test]
    fn average_pre_rank_example() {
        let f = array![[1.0, 2.0], [1.0, 2.0]];
        let y = array![0.0, 0.0];
        assert_eq!(pre_rank(f.view(), y.view(), PreRankKind::Average).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn ties_with_member_average() {
        let f = array![[0.3, 2.0, -1.0]];
        let y = array![2.0];
        let pr = pre_rank(f.view(), y.view(), PreRankKind::Average).unwrap();
        assert_eq!(pr[0], pr[2]);
        assert_eq!(pr[0], 3.5);
    }

    #[test]
    fn one_dimensional_order_matches_values() {
        let f = array![[0.3, 2.0, -1.0, 7.0]];
        let y = array![1.0];
        let pr = pre_rank(f.view(), y.view(), PreRankKind::Average).unwrap();
        let vals = [1.0, 0.3, 2.0, -1.0, 7.0];
        for a in 0..5 {
            for b in 0..5 {
                assert_eq!(pr[a] < pr[b], vals[a] < vals[b]);
            }
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("band_depth".parse::<PreRankKind>().unwrap(), PreRankKind::BandDepth);
        assert!("median".parse::<PreRankKind>().is_err());
    }

    #[test]
    fn reliability_index_examples() {
        assert_eq!(reliability_index(&[5, 5, 5, 5]), 0.0);
        assert!((reliability_index(&[12, 0, 0, 0]) - 1.5).abs() < 1e-15);
        let h = RankHistogram::from_bins(PreRankKind::Average, vec![3, 1, 0, 4]);
        assert_eq!(h.reliability_index, reliability_index(&h.bins));
        assert_eq!(h.cases(), 8);
    }

    #[test]
    fn mixed_ensemble_sizes_rejected() {
        let a = (array![[1.0, 2.0]], array![0.5]);
        let b = (array![[1.0, 2.0, 3.0]], array![0.5]);
        let cases = [(a.0.view(), a.1.view()), (b.0.view(), b.1.view())];
        assert!(rank_histogram(cases, PreRankKind::Average, 1).is_err());
    }

    fn pooled_matrix(f: &Array2<f64>, y: &Array1<f64>) -> Array2<f64> {
        let mut m = y.clone().insert_axis(Axis(1));
        m.append(Axis(1), f.view()).unwrap();
        m
    }

    proptest! {
        #[test]
        fn score_pre_ranks_are_leave_one_out_scores(
            (d, k, vals) in (2usize..5, 2usize..6).prop_flat_map(|(d, k)| (Just(d), Just(k), prop::collection::vec(-4.0..4.0f64, d * (k + 1))))
        ) {
            let all = Array2::from_shape_vec((d, k + 1), vals).unwrap();
            let y = all.column(0).to_owned();
            let f = all.slice(ndarray::s![.., 1..]).to_owned();
            let pool = pooled_matrix(&f, &y);
            let es = pre_rank(f.view(), y.view(), PreRankKind::EnergyScore).unwrap();
            let vs = pre_rank(f.view(), y.view(), PreRankKind::Dependence).unwrap();
            for e in 0..=k {
                let others: Vec<usize> = (0..=k).filter(|&i| i != e).collect();
                let ens = pool.select(Axis(1), &others);
                let x = pool.column(e);
                let es_ref = energy_score(ens.view(), x).unwrap();
                let vs_ref = variogram_score(ens.view(), x, None, 0.5).unwrap();
                prop_assert!((es[e] - es_ref).abs() <= 1e-10 * es_ref.max(1.0));
                prop_assert!((vs[e] - vs_ref).abs() <= 1e-10 * vs_ref.max(1.0));
            }
        }
    }
}
