//! A projected field keeps its own learned invariant constant up to
//! integrator error, for untrained networks too.

use conserve::autodiff::{init_params, MlpSpec};
use conserve::conservation::ConservationNet;
use conserve::dynamics::{DynamicsModel, DynamicsNet, ProjectedDynamics};
use conserve::simeval::rollout;

fn max_drift(model: &DynamicsModel, h: &ConservationNet, x0: &[f64], dt: f64) -> f64 {
    let r = rollout(model, x0, dt, (10.0 / dt).round() as usize).unwrap();
    assert!(!r.diverged);
    let h0 = h.eval(x0).unwrap()[0];
    r.states.iter().map(|s| (h.eval(s).unwrap()[0] - h0).abs()).fold(0.0, f64::max)
}

#[test]
fn drift_shrinks_with_fourth_order() {
    for (n, seed) in [(2, 0), (2, 1), (4, 2), (3, 3)] {
        let h = ConservationNet::new(init_params(&MlpSpec::new(vec![n, 16, 1]).unwrap(), seed), false);
        let f = DynamicsNet::new(init_params(&MlpSpec::new(vec![n, 16, n]).unwrap(), 100 + seed)).unwrap();
        let model = DynamicsModel::Projected(ProjectedDynamics::new(f, h.clone()).unwrap());
        let x0: Vec<f64> = (0..n).map(|i| 0.5 - 0.3 * i as f64).collect();
        let coarse = max_drift(&model, &h, &x0, 0.1);
        let fine = max_drift(&model, &h, &x0, 0.05);
        if coarse < 1e-14 {
            assert!(fine < 1e-14, "n={n} seed={seed}: {fine:e}");
        } else {
            assert!(coarse / fine >= 8.0, "n={n} seed={seed}: {coarse:e} / {fine:e}");
        }
    }
}
