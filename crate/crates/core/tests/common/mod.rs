#![allow(dead_code)]

use cqm_core::falg::SpecialQuadratic;
use cqm_core::quantum::{WaveFunction, C64};
use cqm_core::{Expr, FibredChart, GeometryBundle, Grid, SpacelikeMetric};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn chart(extent: Vec<(f64, f64)>, points: Vec<usize>, order: usize) -> FibredChart {
    FibredChart::new(extent, points, 0.01)
        .unwrap()
        .with_order(order)
        .unwrap()
}

pub fn flat_box(n: usize, half: f64, points: usize, order: usize) -> GeometryBundle {
    GeometryBundle::flat(chart(vec![(-half, half); n], vec![points; n], order))
}

pub fn with_potential(b: GeometryBundle, potential: Vec<Expr>) -> GeometryBundle {
    GeometryBundle::from_potential(b.chart, b.metric, potential).unwrap()
}

/// Isotropic oscillator `A₀ = -½ Σ x²` on a flat box.
pub fn oscillator(n: usize, half: f64, points: usize, order: usize) -> GeometryBundle {
    let a0 = -0.5 * (0..n).map(|i| Expr::x(i).square()).sum::<Expr>();
    let mut a = vec![a0];
    a.extend((0..n).map(|_| Expr::zero()));
    with_potential(flat_box(n, half, points, order), a)
}

pub fn sphere_patch(half: f64, points: usize, order: usize) -> GeometryBundle {
    GeometryBundle::from_potential(
        chart(vec![(-half, half); 2], vec![points; 2], order),
        SpacelikeMetric::stereographic_sphere(1.0),
        vec![Expr::zero(); 3],
    )
    .unwrap()
}

fn coef(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    rng.random_range(-scale..scale)
}

/// Smooth function of `(t, x)` built from a small random dictionary.
pub fn random_spacetime_expr(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Expr {
    let mut e = Expr::constant(coef(rng, scale));
    e = e + coef(rng, scale) * Expr::t();
    for i in 0..n {
        let xi = Expr::x(i);
        e = e + coef(rng, scale) * &xi;
        e = e + coef(rng, scale) * xi.square();
        e = e + coef(rng, scale) * (Expr::t() * &xi);
        e = e + coef(rng, scale) * (coef(rng, 1.5) * &xi + coef(rng, 1.0) * Expr::t()).sin();
    }
    if n > 1 {
        e = e + coef(rng, scale) * (Expr::x(0) * Expr::x(n - 1));
    }
    e
}

/// Symmetric metric, uniformly positive definite on `[-1, 1]ⁿ × [0, 1]`.
pub fn random_metric(rng: &mut ChaCha8Rng, n: usize) -> SpacelikeMetric {
    let mut comps = vec![Expr::zero(); n * n];
    for i in 0..n {
        let wobble = (coef(rng, 1.5) * Expr::x(i) + coef(rng, 1.0) * Expr::t()).sin();
        comps[i * n + i] = rng.random_range(1.5..2.5) + coef(rng, 0.3) * wobble + coef(rng, 0.1) * Expr::x((i + 1) % n).square();
    }
    for i in 0..n {
        for j in i + 1..n {
            let off = coef(rng, 0.15) * (Expr::x(i) * Expr::x(j)) + coef(rng, 0.1) * (Expr::t() * Expr::x(j)).cos();
            comps[i * n + j] = off.clone();
            comps[j * n + i] = off;
        }
    }
    SpacelikeMetric::new(n, comps).unwrap()
}

pub fn random_bundle(rng: &mut ChaCha8Rng, n: usize) -> GeometryBundle {
    let metric = random_metric(rng, n);
    let potential = (0..=n).map(|_| random_spacetime_expr(rng, n, 0.5)).collect();
    GeometryBundle::from_potential(chart(vec![(-1.0, 1.0); n], vec![8; n], 2), metric, potential).unwrap()
}

/// Random quantisable function: `f⁰` depends on time only.
pub fn random_quantisable(rng: &mut ChaCha8Rng, n: usize) -> SpecialQuadratic {
    let f0 = match rng.random_range(0..3) {
        0 => Expr::zero(),
        1 => Expr::constant(coef(rng, 1.0)),
        _ => coef(rng, 1.0) + coef(rng, 0.5) * Expr::t(),
    };
    let fi = (0..n).map(|_| random_spacetime_expr(rng, n, 0.4)).collect();
    SpecialQuadratic::new(f0, fi, random_spacetime_expr(rng, n, 0.6))
}

pub fn random_point(rng: &mut ChaCha8Rng, n: usize, half: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let t = rng.random_range(0.0..1.0);
    let x = (0..n).map(|_| rng.random_range(-half..half)).collect();
    let v = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    (t, x, v)
}

/// Gaussian bump with random centre, width and momentum, well inside the box.
pub fn random_packet(rng: &mut ChaCha8Rng, grid: &Grid, half: f64) -> WaveFunction {
    let n = grid.n();
    let centre: Vec<f64> = (0..n).map(|_| rng.random_range(-0.25 * half..0.25 * half)).collect();
    let k: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
    let width = rng.random_range(0.08..0.12) * half;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    WaveFunction::from_fn(grid, 0.0, |x| {
        let mut r2 = 0.0;
        let mut kx = phase;
        for i in 0..n {
            let d = x[i] - centre[i];
            r2 += d * d;
            kx += k[i] * x[i];
        }
        C64::from_polar((-0.5 * r2 / (width * width)).exp(), kx)
    })
}

/// Random grid values with no smoothness at all.
pub fn random_values(rng: &mut ChaCha8Rng, len: usize) -> Vec<C64> {
    (0..len)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}
