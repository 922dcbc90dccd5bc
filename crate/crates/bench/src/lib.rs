//! Shared fixtures for the benchmarks.

use cqm_core::{Expr, FibredChart, GeometryBundle, SpacelikeMetric};

/// One dimensional oscillator `V = ½x²` on `[-half, half]`.
pub fn oscillator(half: f64, points: usize, order: usize) -> GeometryBundle {
    let chart = FibredChart::new(vec![(-half, half)], vec![points], 0.01)
        .and_then(|c| c.with_order(order))
        .expect("valid chart");
    let potential = vec![-0.5 * Expr::x(0).square(), Expr::zero()];
    GeometryBundle::from_potential(chart, SpacelikeMetric::flat(1), potential).expect("valid bundle")
}

/// Two dimensional conformally curved patch with a magnetic potential.
pub fn curved_patch(points: usize) -> GeometryBundle {
    let chart = FibredChart::new(vec![(-1.0, 1.0); 2], vec![points; 2], 0.01).expect("valid chart");
    let metric = SpacelikeMetric::conformal(2, 1.0 + 0.2 * (Expr::x(0).square() + Expr::x(1).square()));
    let potential = vec![
        -(Expr::x(0).square() + Expr::x(1).square()),
        -0.5 * Expr::x(1),
        0.5 * Expr::x(0),
    ];
    GeometryBundle::from_potential(chart, metric, potential).expect("valid bundle")
}
