//! Empirical-copula reordering.
//!
//! A [`RankTemplate`] holds one permutation per dimension. Applying it to a
//! calibrated sample with ascending rows puts the value of rank `pi_d(k)`
//! into member slot `k`, so every row keeps its values while the joint rank
//! structure is copied from the template source.

use std::io::Write;

use chrono::{DateTime, Utc};
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateSource {
    RawEnsemble,
    HistoricalObs,
    GnnOutput,
}

impl TemplateSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RawEnsemble => "raw_ensemble",
            Self::HistoricalObs => "historical_obs",
            Self::GnnOutput => "gnn_output",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTemplate {
    /// `ranks[d][k]` is the 0-based rank of member `k` in dimension `d`.
    ranks: Vec<Vec<usize>>,
    source: TemplateSource,
    seed: u64,
}

impl RankTemplate {
    pub fn new(ranks: Vec<Vec<usize>>, source: TemplateSource, seed: u64) -> Result<Self> {
        let k = ranks.first().map_or(0, Vec::len);
        for row in &ranks {
            if row.len() != k {
                return Err(Error::mismatch("template rows differ in length"));
            }
            let mut seen = vec![false; k];
            for &r in row {
                if r >= k || std::mem::replace(&mut seen[r], true) {
                    return Err(Error::invalid("template row is not a permutation"));
                }
            }
        }
        Ok(Self { ranks, source, seed })
    }

    pub fn identity(dim: usize, members: usize, source: TemplateSource) -> Self {
        Self {
            ranks: vec![(0..members).collect(); dim],
            source,
            seed: 0,
        }
    }

    pub fn ranks(&self) -> &[Vec<usize>] {
        &self.ranks
    }

    pub fn source(&self) -> TemplateSource {
        self.source
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.ranks.len()
    }

    pub fn members(&self) -> usize {
        self.ranks.first().map_or(0, Vec::len)
    }

    /// Writes `dimension,member,rank` rows with 1-based ranks.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Numerical(format!("template CSV: {e}"));
        w.write_record(["dimension", "member", "rank"]).map_err(err)?;
        for (d, row) in self.ranks.iter().enumerate() {
            for (k, r) in row.iter().enumerate() {
                w.write_record([d.to_string(), (k + 1).to_string(), (r + 1).to_string()])
                    .map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::Numerical(format!("template CSV: {e}")))?;
        Ok(())
    }
}

/// Ascending 0-based ranks of `row`, ties ordered uniformly at random.
pub fn rank_row<R: Rng>(row: ArrayView1<f64>, rng: &mut R) -> Vec<usize> {
    let keys: Vec<u64> = (0..row.len()).map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(keys[a].cmp(&keys[b])));
    let mut ranks = vec![0; row.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r;
    }
    ranks
}

pub fn template_from_vectors(vectors: ArrayView2<f64>, source: TemplateSource, seed: u64) -> Result<RankTemplate> {
    if vectors.ncols() < 2 {
        return Err(Error::invalid("a rank template needs at least two members"));
    }
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("template source contains non-finite values"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranks = vectors.rows().into_iter().map(|row| rank_row(row, &mut rng)).collect();
    Ok(RankTemplate { ranks, source, seed })
}

pub fn apply_template(calibrated: ArrayView2<f64>, template: &RankTemplate) -> Result<Array2<f64>> {
    let (d, k) = calibrated.dim();
    if d != template.dim() || k != template.members() {
        return Err(Error::mismatch(format!(
            "calibrated sample is {d}x{k}, template is {}x{}",
            template.dim(),
            template.members()
        )));
    }
    for (i, row) in calibrated.rows().into_iter().enumerate() {
        if row.iter().zip(row.iter().skip(1)).any(|(a, b)| !(a <= b)) {
            return Err(Error::invalid(format!("calibrated row {i} is not ascending")));
        }
    }
    Ok(Array2::from_shape_fn((d, k), |(i, j)| calibrated[[i, template.ranks[i][j]]]))
}

/// Ensemble copula coupling: reorder by the raw ensemble's ranks.
pub fn ecc(raw: ArrayView2<f64>, calibrated: ArrayView2<f64>, seed: u64) -> Result<Array2<f64>> {
    if raw.dim() != calibrated.dim() {
        return Err(Error::mismatch(format!(
            "ECC needs matching shapes: raw {:?}, calibrated {:?}",
            raw.dim(),
            calibrated.dim()
        )));
    }
    apply_template(calibrated, &template_from_vectors(raw, TemplateSource::RawEnsemble, seed)?)
}

/// Schaake shuffle: reorder by the ranks of `K` historical observation
/// vectors drawn without replacement from `historical`.
pub fn schaake_shuffle(historical: &[Vec<f64>], calibrated: ArrayView2<f64>, seed: u64) -> Result<Array2<f64>> {
    let (d, k) = calibrated.dim();
    if historical.len() < k {
        return Err(Error::invalid(format!(
            "Schaake shuffle needs {k} historical vectors, got {}",
            historical.len()
        )));
    }
    if let Some(bad) = historical.iter().find(|v| v.len() != d) {
        return Err(Error::mismatch(format!(
            "historical vector has {} dimensions, expected {d}",
            bad.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, historical.len(), k).into_vec();
    chosen.sort_unstable();
    let pool = Array2::from_shape_fn((d, k), |(i, j)| historical[chosen[j]][i]);
    let template = template_from_vectors(pool.view(), TemplateSource::HistoricalObs, rng.random())?;
    apply_template(calibrated, &template)
}

/// Reorder a calibrated sample by the rank structure of a network's output.
pub fn hybrid_from_gnn(gnn_output: ArrayView2<f64>, calibrated: ArrayView2<f64>, seed: u64) -> Result<Array2<f64>> {
    if gnn_output.dim() != calibrated.dim() {
        return Err(Error::mismatch(format!(
            "network output {:?} does not match calibrated sample {:?}",
            gnn_output.dim(),
            calibrated.dim()
        )));
    }
    apply_template(calibrated, &template_from_vectors(gnn_output, TemplateSource::GnnOutput, seed)?)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Per-case seed derived from the global seed, init time and lead time.
pub fn case_seed(global: u64, init_time: DateTime<Utc>, lead_time: u32) -> u64 {
    let h = splitmix64(global ^ splitmix64(init_time.timestamp() as u64));
    splitmix64(h ^ u64::from(lead_time))
}

/// Sorts each row ascending.
pub fn sort_rows(m: ArrayView2<f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.rows_mut() {
        let mut v = row.to_vec();
        v.sort_by(f64::total_cmp);
        row.assign(&ArrayView1::from(&v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn hand_ranked_row() {
        let t = template_from_vectors(array![[3.0, 1.0, 2.0]].view(), TemplateSource::RawEnsemble, 0).unwrap();
        assert_eq!(t.ranks()[0], vec![2, 0, 1]);
        let out = apply_template(array![[10.0, 20.0, 30.0]].view(), &t).unwrap();
        assert_eq!(out, array![[30.0, 10.0, 20.0]]);
    }

    #[test]
    fn increasing_row_gives_identity() {
        let t = template_from_vectors(array![[1.0, 2.0, 5.0, 9.0]].view(), TemplateSource::RawEnsemble, 1).unwrap();
        assert_eq!(t, RankTemplate { ranks: vec![vec![0, 1, 2, 3]], source: TemplateSource::RawEnsemble, seed: 1 });
        let c = array![[0.5, 0.6, 0.7, 0.8]];
        assert_eq!(apply_template(c.view(), &t).unwrap(), c);
    }

    #[test]
    fn tied_row_is_reproducible_permutation() {
        let v = array![[4.0; 7]];
        let a = template_from_vectors(v.view(), TemplateSource::RawEnsemble, 42).unwrap();
        let b = template_from_vectors(v.view(), TemplateSource::RawEnsemble, 42).unwrap();
        assert_eq!(a, b);
        assert!(RankTemplate::new(a.ranks().to_vec(), a.source(), 42).is_ok());
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = RankTemplate::identity(1, 3, TemplateSource::GnnOutput);
        assert!(apply_template(array![[3.0, 1.0, 2.0]].view(), &t).is_err());
        assert!(template_from_vectors(array![[1.0, f64::NAN]].view(), TemplateSource::RawEnsemble, 0).is_err());
        assert!(template_from_vectors(array![[1.0]].view(), TemplateSource::RawEnsemble, 0).is_err());
        assert!(RankTemplate::new(vec![vec![0, 0]], TemplateSource::GnnOutput, 0).is_err());
        assert!(ecc(array![[1.0, 2.0]].view(), array![[1.0, 2.0, 3.0]].view(), 0).is_err());
        let hist = vec![vec![1.0], vec![2.0]];
        assert!(schaake_shuffle(&hist, array![[1.0, 2.0, 3.0]].view(), 0).is_err());
    }

    #[test]
    fn ecc_fixed_point() {
        let raw = array![[1.0, 2.0, 3.0], [0.0, 5.0, 9.0]];
        assert_eq!(ecc(raw.view(), raw.view(), 3).unwrap(), raw);
    }

    #[test]
    fn schaake_exhaustive_pool_is_deterministic() {
        let hist = vec![vec![3.0, 1.0], vec![1.0, 2.0], vec![2.0, 3.0]];
        let cal = array![[10.0, 20.0, 30.0], [1.0, 2.0, 3.0]];
        let a = schaake_shuffle(&hist, cal.view(), 11).unwrap();
        assert_eq!(a, array![[30.0, 10.0, 20.0], [1.0, 2.0, 3.0]]);
        assert_eq!(a, schaake_shuffle(&hist, cal.view(), 99).unwrap());
    }

    #[test]
    fn case_seed_varies() {
        let t = DateTime::from_timestamp(1_600_000_000, 0).unwrap();
        assert_ne!(case_seed(1, t, 6), case_seed(1, t, 12));
        assert_ne!(case_seed(1, t, 6), case_seed(2, t, 6));
        assert_eq!(case_seed(1, t, 6), case_seed(1, t, 6));
    }

    proptest! {
        #[test]
        fn round_trip_and_marginals(
            d in 1usize..5, k in 2usize..10, seed in any::<u64>(),
            vals in prop::collection::vec(-100.0f64..100.0, 100),
        ) {
            let src = Array2::from_shape_fn((d, k), |(i, j)| vals[(i * k + j) % vals.len()] + (i * k + j) as f64 * 1e-3);
            let cal = sort_rows(Array2::from_shape_fn((d, k), |(i, j)| vals[(7 * i + 3 * j + 1) % vals.len()] * 0.5 + j as f64).view());
            let distinct = cal.rows().into_iter().all(|r| r.iter().zip(r.iter().skip(1)).all(|(a, b)| a < b));
            let out = hybrid_from_gnn(src.view(), cal.view(), seed).unwrap();
            for i in 0..d {
                prop_assert_eq!(sorted(out.row(i).to_vec()), cal.row(i).to_vec());
            }
            if distinct {
                let t_src = template_from_vectors(src.view(), TemplateSource::GnnOutput, seed).unwrap();
                let t_out = template_from_vectors(out.view(), TemplateSource::GnnOutput, seed).unwrap();
                prop_assert_eq!(t_src.ranks(), t_out.ranks());
            }
        }
    }
}
