mod common;

use common::*;
use enspost::scores::{crps_censored_normal, crps_sample, energy_score, variogram_score, VsWeights};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sample_scores_match_brute_force() {
    let worst = criteria::score_oracle_errors(1000, 11);
    assert!(worst.iter().all(|&e| e < 1e-12), "relative errors {worst:?}");
}

#[test]
fn weighted_variogram_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let d = rng.random_range(2..=5);
        let k = rng.random_range(2..=10);
        let f = random_matrix(&mut rng, d, k, 1.0);
        let y = random_matrix(&mut rng, d, 1, 1.0).column(0).to_owned();
        let mut w = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..=i {
                let v: f64 = rng.random();
                w[[i, j]] = v;
                w[[j, i]] = v;
            }
        }
        let p = rng.random_range(0.3..2.0);
        let weights = VsWeights::new(w.clone()).unwrap();
        let got = variogram_score(f.view(), y.view(), Some(&weights), p).unwrap();
        assert!(rel_err(got, brute_vs(&f, &y, Some(&w), p)) < 1e-12);
    }
}

#[test]
fn censored_crps_matches_quadrature_on_grid() {
    let (count, worst) = criteria::censored_crps_grid();
    assert_eq!(count, 72);
    assert!(worst < 1e-6, "worst gap {worst:e}");
}

#[test]
fn zero_weights_give_zero_variogram() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = random_matrix(&mut rng, 4, 6, 1.0);
    let y = random_matrix(&mut rng, 4, 1, 1.0).column(0).to_owned();
    let w = VsWeights::new(Array2::zeros((4, 4))).unwrap();
    assert_eq!(variogram_score(f.view(), y.view(), Some(&w), 0.5).unwrap(), 0.0);
}

fn case_strategy() -> impl Strategy<Value = (Array2<f64>, Array1<f64>)> {
    (1usize..5, 1usize..9).prop_flat_map(|(d, k)| {
        (
            prop::collection::vec(-20.0..20.0f64, d * k),
            prop::collection::vec(-20.0..20.0f64, d),
        )
            .prop_map(move |(f, y)| (Array2::from_shape_vec((d, k), f).unwrap(), Array1::from(y)))
    })
}

proptest! {
    #[test]
    fn one_dimensional_energy_score_is_crps((f, y) in case_strategy()) {
        let row = f.row(0).to_owned().insert_axis(ndarray::Axis(0));
        let es = energy_score(row.view(), y.slice(ndarray::s![..1])).unwrap();
        let crps = crps_sample(&f.row(0).to_vec(), y[0]).unwrap();
        prop_assert!((es - crps).abs() <= 1e-12 * crps.max(1.0));
    }

    #[test]
    fn scores_ignore_member_order((f, y) in case_strategy(), shift in 0usize..8) {
        let k = f.ncols();
        let perm: Vec<usize> = (0..k).map(|i| (i + shift) % k).rev().collect();
        let g = f.select(ndarray::Axis(1), &perm);
        let a = energy_score(f.view(), y.view()).unwrap();
        let b = energy_score(g.view(), y.view()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        let a = variogram_score(f.view(), y.view(), None, 0.5).unwrap();
        let b = variogram_score(g.view(), y.view(), None, 0.5).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn scores_are_nonnegative((f, y) in case_strategy()) {
        prop_assert!(energy_score(f.view(), y.view()).unwrap() >= 0.0);
        prop_assert!(variogram_score(f.view(), y.view(), None, 1.0).unwrap() >= 0.0);
        prop_assert!(crps_sample(&f.row(0).to_vec(), y[0]).unwrap() >= 0.0);
    }

    #[test]
    fn censored_crps_is_nonnegative(mu in -10.0..10.0f64, sigma in 0.05..5.0f64, y in 0.0..15.0f64) {
        prop_assert!(crps_censored_normal(mu, sigma, y).unwrap() >= 0.0);
    }
}
