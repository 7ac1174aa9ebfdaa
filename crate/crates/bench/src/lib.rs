//! Fixtures shared by the benchmarks.

use iqvi_core::config;
use iqvi_core::{IqviProblem, MovingSet, OperatorSpec, RoadPricingOperator, TrafficNetwork, ODMatrix, UeSettings, Vector};
use nalgebra::DMatrix;

/// The 2-D benchmark problem and its starting point.
pub fn example1() -> (IqviProblem, Vector) {
    let loaded = config::example1();
    let u0 = loaded.u0.expect("shipped file has u0");
    (loaded.problem, u0)
}

/// `n`-dimensional affine problem `(2I + S) u + 1` on the box `[-1, 1]^n`,
/// with `S` a fixed skew pattern.
pub fn affine_box(n: usize) -> IqviProblem {
    let m = DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => 2.0,
        std::cmp::Ordering::Less => 0.1,
        std::cmp::Ordering::Greater => -0.1,
    });
    let op = OperatorSpec::affine(m, Vector::from_element(n, 1.0), None).expect("square matrix");
    let set = MovingSet::fixed_box(Vector::from_element(n, -1.0), Vector::from_element(n, 1.0)).expect("ordered bounds");
    IqviProblem::new(n, op, set, 2.0).expect("consistent dimensions")
}

/// Road-pricing operator on the shipped synthetic network.
pub fn synthetic_pricing(gap_tol: f64) -> RoadPricingOperator {
    let net = TrafficNetwork::synthetic();
    let od = ODMatrix::synthetic(&net);
    RoadPricingOperator::new(net, od, UeSettings { gap_tol, ..UeSettings::default() }).expect("network has tolled links")
}
