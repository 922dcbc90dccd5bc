use std::hint::black_box;

use cqm_bench::{curved_patch, oscillator};
use cqm_core::falg::special_bracket;
use cqm_core::quantum::WaveFunction;
use cqm_core::solver::{normalize, spectrum, CrankNicolson};
use cqm_core::{Expr, SpecialQuadratic, C64};
use criterion::{criterion_group, criterion_main, Criterion};

fn crank_nicolson_step(c: &mut Criterion) {
    let b = oscillator(10.0, 1024, 4);
    let grid = b.grid().unwrap();
    let psi = WaveFunction::from_fn(&grid, 0.0, |x| C64::from_polar((-0.5 * x[0] * x[0]).exp(), x[0]));
    let psi = normalize(&psi, &b).unwrap();
    let mut cn = CrankNicolson::new(&b, 0.0, 1e-3);
    c.bench_function("cn_step_1d_1024", |bench| bench.iter(|| cn.step(black_box(&psi), 1).unwrap()));
}

fn lowest_levels(c: &mut Criterion) {
    let b = oscillator(8.0, 400, 4);
    let h = SpecialQuadratic::hamiltonian(&b);
    let mut group = c.benchmark_group("spectrum");
    group.sample_size(10);
    group.bench_function("oscillator_1d_400_modes_4", |bench| {
        bench.iter(|| spectrum(black_box(&h), &b, 0.0, 4).unwrap())
    });
    group.finish();
}

fn bracket(c: &mut Criterion) {
    let b = curved_patch(16);
    let h = SpecialQuadratic::hamiltonian(&b);
    let p = SpecialQuadratic::momentum(&b, 0);
    let g = SpecialQuadratic::spacetime(2, Expr::x(0) * Expr::x(1));
    c.bench_function("special_bracket_h_p", |bench| bench.iter(|| special_bracket(black_box(&h), &p, &b).unwrap()));
    c.bench_function("special_bracket_h_g", |bench| bench.iter(|| special_bracket(black_box(&h), &g, &b).unwrap()));
}

criterion_group!(benches, crank_nicolson_step, lowest_levels, bracket);
criterion_main!(benches);
