mod common;

use common::criteria::{calibrated_cases, dm_null_rejection_rate, full_range_coverage, rank_uniformity};
use enspost::scores::PreRankKind;

#[test]
fn exchangeable_cases_give_flat_histograms() {
    let cases = calibrated_cases(10_000, 10, 8, 0);
    for (kind, p, ri) in rank_uniformity(&cases, 0) {
        assert!(p > 0.01, "{kind:?}: chi-square p = {p}");
        if kind == PreRankKind::Average {
            assert!(ri < 0.05, "average-rank RI = {ri}");
        }
    }
}

#[test]
fn underdispersion_gives_u_shape() {
    let spec = enspost::pipeline::SyntheticSpec {
        stations: 10,
        days: 3000,
        dispersion: 0.3,
        seed: 9,
        ..Default::default()
    };
    let data = enspost::pipeline::generate_synthetic(&spec).unwrap();
    let cases = enspost::pipeline::assemble_cases(&data).unwrap().cases;
    let h = enspost::scores::rank_histogram_cases(&cases, PreRankKind::Average, 1).unwrap();
    let interior = &h.bins[1..h.bins.len() - 1];
    let avg = interior.iter().sum::<u64>() as f64 / interior.len() as f64;
    assert!(h.bins[0] as f64 > 2.0 * avg && h.bins[h.bins.len() - 1] as f64 > 2.0 * avg, "{:?}", h.bins);
}

#[test]
fn full_range_coverage_is_seven_ninths() {
    let cases = calibrated_cases(10_000, 1, 8, 3);
    let c = full_range_coverage(&cases);
    assert!((0.76..=0.80).contains(&c), "coverage {c}");
}

#[test]
fn dm_test_holds_its_level() {
    let rate = dm_null_rejection_rate(500, 1000, 13);
    assert!((0.03..=0.08).contains(&rate), "rejection rate {rate}");
}
