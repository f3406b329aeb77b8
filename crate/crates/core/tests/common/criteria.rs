//! Quantitative checks reused by the integration tests and the acceptance run.

use enspost::copula::{ecc, hybrid_from_gnn, schaake_shuffle, sort_rows};
use enspost::domain::{ensemble_stats, EnsembleStats};
use enspost::marginal::{emos_link, fit_emos, fit_polr, EmosFitConfig, EmosParams, PolrFitConfig, PolrModel};
use enspost::pipeline::{assemble_cases, generate_synthetic, SyntheticSpec};
use enspost::scores::{
    chi_square_uniformity, crps_censored_normal, crps_sample, dm_test, energy_score, rank_histogram_cases,
    variogram_score, DmVariance, PreRankKind, ScoreSeries,
};
use enspost::domain::MultivariateCase;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{brute_crps, brute_es, brute_vs, censored_crps_quadrature, random_matrix, rel_err};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Worst relative error of sample CRPS, ES and VS against the brute-force
/// forms over `cases` random cases with `D <= 5`, `K <= 10`.
pub fn score_oracle_errors(cases: usize, seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..cases {
        let d = rng.random_range(1..=5);
        let k = rng.random_range(1..=10);
        let f = random_matrix(&mut rng, d, k, 2.0);
        let y: Array1<f64> = random_matrix(&mut rng, d, 1, 2.0).column(0).to_owned();

        let row = f.row(0).to_vec();
        worst[0] = worst[0].max(rel_err(crps_sample(&row, y[0]).unwrap(), brute_crps(&row, y[0])));
        worst[1] = worst[1].max(rel_err(energy_score(f.view(), y.view()).unwrap(), brute_es(&f, &y)));
        worst[2] = worst[2].max(rel_err(
            variogram_score(f.view(), y.view(), None, 0.5).unwrap(),
            brute_vs(&f, &y, None, 0.5),
        ));
    }
    worst
}

/// `(grid points, worst absolute gap)` between the closed-form censored
/// normal CRPS and quadrature.
pub fn censored_crps_grid() -> (usize, f64) {
    let mut count = 0;
    let mut worst = 0.0f64;
    for mu in [-2.0, -1.0, 0.0, 1.0, 2.0, 5.0] {
        for sigma in [0.5, 1.0, 3.0] {
            for y in [0.0, 0.5, 1.0, 5.0] {
                let closed = crps_censored_normal(mu, sigma, y).unwrap();
                worst = worst.max((closed - censored_crps_quadrature(mu, sigma, y)).abs());
                count += 1;
            }
        }
    }
    (count, worst)
}

/// Position of each element in ascending order; inputs must be tie-free.
pub fn ranks(row: ArrayView1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap());
    let mut r = vec![0; row.len()];
    for (pos, &i) in idx.iter().enumerate() {
        r[i] = pos;
    }
    r
}

fn same_structure(out: ArrayView2<f64>, template: ArrayView2<f64>, calibrated: ArrayView2<f64>) -> Result<(), String> {
    if sort_rows(out) != sort_rows(calibrated) {
        return Err("per-station multiset changed".into());
    }
    for (i, (a, b)) in out.rows().into_iter().zip(template.rows()).enumerate() {
        if ranks(a) != ranks(b) {
            return Err(format!("rank structure differs at station {i}"));
        }
    }
    Ok(())
}

fn tie_free<R: Rng>(rng: &mut R, d: usize, k: usize) -> Array2<f64> {
    Array2::from_shape_fn((d, k), |_| rng.sample::<f64, _>(StandardNormal) * 5.0)
}

/// ECC, Schaake shuffle and network-template reordering on random cases.
pub fn copula_exactness(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..cases {
        let d = rng.random_range(1..8);
        let k = rng.random_range(2..20);
        let calibrated = sort_rows(tie_free(&mut rng, d, k).view());
        let s: u64 = rng.random();

        let raw = tie_free(&mut rng, d, k);
        let out = ecc(raw.view(), calibrated.view(), s).map_err(|e| e.to_string())?;
        same_structure(out.view(), raw.view(), calibrated.view()).map_err(|e| format!("ECC case {c}: {e}"))?;

        // A pool of exactly K vectors fixes the template up to ordering by index.
        let hist = tie_free(&mut rng, d, k);
        let pool: Vec<Vec<f64>> = hist.columns().into_iter().map(|col| col.to_vec()).collect();
        let out = schaake_shuffle(&pool, calibrated.view(), s).map_err(|e| e.to_string())?;
        same_structure(out.view(), hist.view(), calibrated.view()).map_err(|e| format!("SSh case {c}: {e}"))?;

        let gnn = tie_free(&mut rng, d, k);
        let out = hybrid_from_gnn(gnn.view(), calibrated.view(), s).map_err(|e| e.to_string())?;
        same_structure(out.view(), gnn.view(), calibrated.view()).map_err(|e| format!("hybrid case {c}: {e}"))?;
    }
    Ok(())
}

/// Perfectly calibrated synthetic cases from the pipeline generator.
pub fn calibrated_cases(days: usize, stations: usize, members: usize, seed: u64) -> Vec<MultivariateCase> {
    let spec = SyntheticSpec {
        stations,
        days,
        members,
        seed,
        ..Default::default()
    };
    assemble_cases(&generate_synthetic(&spec).unwrap()).unwrap().cases
}

/// `(kind, chi-square p-value, reliability index)` per pre-rank kind.
pub fn rank_uniformity(cases: &[MultivariateCase], seed: u64) -> Vec<(PreRankKind, f64, f64)> {
    PreRankKind::ALL
        .iter()
        .map(|&kind| {
            let h = rank_histogram_cases(cases, kind, seed).unwrap();
            let (_, p) = chi_square_uniformity(&h.bins).unwrap();
            (kind, p, h.reliability_index)
        })
        .collect()
}

/// Fraction of station values inside the ensemble range.
pub fn full_range_coverage(cases: &[MultivariateCase]) -> f64 {
    let mut inside = 0usize;
    let mut total = 0usize;
    for c in cases {
        for (row, y) in c.forecasts.rows().into_iter().zip(c.observations.iter()) {
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            inside += usize::from(lo <= *y && *y <= hi);
            total += 1;
        }
    }
    inside as f64 / total as f64
}

/// Two-sided 5% rejection rate of the DM test when both series are i.i.d.
/// draws from one skewed law.
pub fn dm_null_rejection_rate(n: usize, replications: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let law = Gamma::new(2.0, 0.5).unwrap();
    let mut rejected = 0;
    for _ in 0..replications {
        let a: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();
        let r = dm_test(&ScoreSeries::from_values(a), &ScoreSeries::from_values(b), DmVariance::Sample).unwrap();
        rejected += usize::from(r.p_value < 0.05);
    }
    rejected as f64 / replications as f64
}

pub const EMOS_TRUTH: EmosParams = EmosParams {
    gamma0: 0.4,
    gamma1: 0.9,
    gamma2: -0.6,
    delta0: 0.3,
    delta1: 0.7,
};

/// Mean CRPS of the fitted and of the generating parameters on `n`
/// simulated cases.
pub fn emos_recovery(n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(EnsembleStats, f64)> = Vec::with_capacity(n);
    for _ in 0..n {
        let centre = rng.random_range(-1.0..8.0);
        let spread = rng.random_range(0.3..2.5);
        let members: Vec<f64> = (0..8)
            .map(|_| (centre + spread * rng.sample::<f64, _>(StandardNormal)).max(0.0))
            .collect();
        let stats = ensemble_stats(&members).unwrap();
        let dist = emos_link(&EMOS_TRUTH, &stats).unwrap();
        let y = (dist.mu() + dist.sigma() * rng.sample::<f64, _>(StandardNormal)).max(0.0);
        cases.push((stats, y));
    }
    let mean_crps = |p: &EmosParams| {
        cases
            .iter()
            .map(|(s, y)| {
                let d = emos_link(p, s).unwrap();
                crps_censored_normal(d.mu(), d.sigma(), *y).unwrap()
            })
            .sum::<f64>()
            / n as f64
    };
    let fitted = fit_emos(&cases, EmosParams::default(), &EmosFitConfig::default()).unwrap();
    (mean_crps(&fitted), mean_crps(&EMOS_TRUTH))
}

/// Coefficients fitted to `n` cases drawn from a POLR model with
/// coefficients `beta` and ten categories.
pub fn polr_recovery(n: usize, beta: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cutpoints: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
    let truth = PolrModel::new(cutpoints, beta.to_vec()).unwrap();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..beta.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let u: f64 = rng.random();
        let cat = (0..9).find(|&c| u <= truth.cdf(&x, c).unwrap()).unwrap_or(9);
        data.push((x, cat));
    }
    data.shuffle(&mut rng);
    fit_polr(&data, 10, &PolrFitConfig::default()).unwrap().coefficients().to_vec()
}
