//! Analytic parameter gradients against central finite differences.

mod common;

use common::{gradient_check, pooled_spec, probe_spec, Loss};
use signfuse::model::GlobalPool;

#[test]
fn bce_gradients_on_probe_network() {
    let worst = gradient_check(probe_spec(), 8, Loss::Bce([1.0, 0.0, 1.0, 0.0, 0.0]), 5, 150, 11);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn cross_entropy_gradients_on_probe_network() {
    let worst = gradient_check(probe_spec(), 8, Loss::Ce(2), 3, 150, 21);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn gradients_through_pooling_blocks() {
    for pool in [GlobalPool::Avg, GlobalPool::Max] {
        let worst = gradient_check(pooled_spec(pool), 16, Loss::Bce([0.0, 1.0, 1.0, 0.0, 1.0]), 5, 150, 31);
        assert!(worst < 1e-4, "{pool:?}: worst relative error {worst}");
        let worst = gradient_check(pooled_spec(pool), 16, Loss::Ce(0), 3, 150, 41);
        assert!(worst < 1e-4, "{pool:?}: worst relative error {worst}");
    }
}
