mod common;

use common::gradcheck::{layer_instance, loss_instance, LayerCase, LossCase};

const INSTANCES: u64 = 50;
const TOLERANCE: f64 = 1e-4;

#[test]
fn layer_gradients_match_finite_differences() {
    for case in LayerCase::ALL {
        let worst = (0..INSTANCES).map(|s| layer_instance(case, 1000 + s)).fold(0.0, f64::max);
        assert!(worst < TOLERANCE, "{case:?}: worst relative error {worst:e}");
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    for case in LossCase::ALL {
        let worst = (0..INSTANCES).map(|s| loss_instance(case, 2000 + s)).fold(0.0, f64::max);
        assert!(worst < TOLERANCE, "{case:?}: worst relative error {worst:e}");
    }
}
