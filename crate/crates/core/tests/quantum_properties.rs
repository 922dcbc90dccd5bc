mod common;

use common::*;
use cqm_core::expr::point_vars;
use cqm_core::falg::{tangent_lift, SpecialQuadratic};
use cqm_core::quantum::{
    check_support, commutator_check, quantum_operator, quantum_vector_field, schrodinger_apply, TimeSource,
    WaveFunction, C64,
};
use cqm_core::solver::{inner_product, normalize};
use cqm_core::{Expr, GeometryBundle, SpacelikeMetric, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn static_metric(rng: &mut ChaCha8Rng, n: usize) -> SpacelikeMetric {
    let m = random_metric(rng, n);
    let comps = m.components().iter().map(|c| c.subs(Var::T, &Expr::zero())).collect();
    SpacelikeMetric::new(n, comps).unwrap()
}

fn curved_box(rng: &mut ChaCha8Rng, n: usize, points: usize, order: usize) -> GeometryBundle {
    let metric = static_metric(rng, n);
    let potential = (0..=n).map(|_| random_spacetime_expr(rng, n, 0.5)).collect();
    GeometryBundle::from_potential(chart(vec![(-1.0, 1.0); n], vec![points; n], order), metric, potential).unwrap()
}

fn affine(rng: &mut ChaCha8Rng, n: usize) -> SpecialQuadratic {
    let q = random_quantisable(rng, n);
    SpecialQuadratic::new(Expr::zero(), q.fi, q.base)
}

fn states(rng: &mut ChaCha8Rng, b: &GeometryBundle, half: f64, count: usize) -> Vec<WaveFunction> {
    let grid = b.grid().unwrap();
    (0..count)
        .map(|_| normalize(&random_packet(rng, &grid, half), b).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn operators_are_hermitian_on_curved_bundles(seed in any::<u64>(), n in 1usize..=2, order_pick in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let order = [2, 4, 6][order_pick];
        let b = curved_box(&mut rng, n, if n == 1 { 120 } else { 30 }, order);
        let psi = states(&mut rng, &b, 0.6, 3);
        for s in &psi {
            check_support(s, &b).unwrap();
        }
        let t = rng.random_range(0.0..1.0);
        for f in [random_quantisable(&mut rng, n), SpecialQuadratic::hamiltonian(&b), SpecialQuadratic::momentum(&b, n - 1)] {
            let k = rng.random_range(-1.0..1.0);
            let op = quantum_operator(&f, &b, k, t).unwrap();
            prop_assert!(op.stiffness().hermitian_defect() < 1e-12);
            for a in &psi {
                for c in &psi {
                    let (a, c) = (WaveFunction { t, ..a.clone() }, WaveFunction { t, ..c.clone() });
                    let l = inner_product(&op.apply(&a).unwrap(), &c, &b).unwrap();
                    let r = inner_product(&a, &op.apply(&c).unwrap(), &b).unwrap();
                    prop_assert!((l - r).norm() < 1e-8, "{} vs {}", l, r);
                }
            }
        }
    }

    #[test]
    fn vector_field_projects_to_tangent_lift(seed in any::<u64>(), n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_bundle(&mut rng, n);
        let f = random_quantisable(&mut rng, n);
        let y = quantum_vector_field(&f, &b).unwrap();
        let x = tangent_lift(&f, &b).unwrap();
        for _ in 0..10 {
            let (t, p, _) = random_point(&mut rng, n, 1.0);
            let lift = x.eval(t, &p);
            let vars = point_vars(t, &p, &[]);
            prop_assert!((y.y0.eval(&vars) - lift[0]).abs() < 1e-12);
            for j in 0..n {
                prop_assert!((y.yj[j].eval(&vars) - lift[j + 1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_functions_quantise_to_a_lie_morphism(seed in any::<u64>(), curved in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let metric = if curved {
            SpacelikeMetric::new(1, vec![1.5 + 0.3 * (0.4 * Expr::x(0)).sin()]).unwrap()
        } else {
            SpacelikeMetric::flat(1)
        };
        let potential = vec![
            -0.5 * Expr::x(0).square() + 0.2 * Expr::t() * Expr::x(0),
            0.3 * (0.5 * Expr::x(0)).cos(),
        ];
        let b = GeometryBundle::from_potential(chart(vec![(-10.0, 10.0)], vec![801], 8), metric, potential).unwrap();
        let (f, g) = (affine(&mut rng, 1), affine(&mut rng, 1));
        let grid = b.grid().unwrap();
        let (c, k) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let family = |_t: f64| -> Vec<C64> {
            (0..grid.len())
                .map(|i| {
                    let x = grid.coords(i)[0];
                    C64::from_polar((-0.5 * (x - c) * (x - c)).exp(), k * x)
                })
                .collect()
        };
        let t = rng.random_range(0.0..1.0);
        let rep = commutator_check(&f, &g, &family, t, &b, 0.0, 1e-3).unwrap();
        prop_assert!(!rep.obstruction_included);
        prop_assert!(rep.residual <= 1e-8, "residual {}", rep.residual);
    }

    #[test]
    fn distinct_functions_give_distinct_operators(seed in any::<u64>(), slot in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2;
        let b = curved_box(&mut rng, n, 16, 2);
        let f = random_quantisable(&mut rng, n);
        let bump = 1e-3 * (-(Expr::x(0) - 0.2).square() * 4.0).exp();
        let g = match slot {
            0 => f.clone(),
            1 => SpecialQuadratic::new(&f.f0 + 1e-3, f.fi.clone(), f.base.clone()),
            2 => {
                let mut fi = f.fi.clone();
                fi[1] = &fi[1] + &bump;
                SpecialQuadratic::new(f.f0.clone(), fi, f.base.clone())
            }
            _ => SpecialQuadratic::new(f.f0.clone(), f.fi.clone(), &f.base + &bump),
        };
        let grid = b.grid().unwrap();
        let (fh, gh) = (quantum_operator(&f, &b, 0.0, 0.3).unwrap(), quantum_operator(&g, &b, 0.0, 0.3).unwrap());
        // Probe with every unit vector of the grid, a spanning set of states.
        let mut diff: f64 = 0.0;
        for i in 0..grid.len() {
            let mut e = vec![C64::new(0.0, 0.0); grid.len()];
            e[i] = C64::new(1.0, 0.0);
            let (a, c) = (fh.apply_values(&e), gh.apply_values(&e));
            diff = diff.max(a.iter().zip(&c).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max));
        }
        let coefficients_agree = {
            let probe = |s: &SpecialQuadratic| {
                let mut out = Vec::new();
                for idx in 0..grid.len() {
                    let vars = point_vars(0.3, &grid.coords(idx)[..n], &[]);
                    out.push(s.f0.eval(&vars));
                    out.extend(s.fi.iter().map(|e| e.eval(&vars)));
                    out.push(s.base.eval(&vars));
                }
                out
            };
            probe(&f).iter().zip(probe(&g)).all(|(p, q)| (p - q).abs() < 1e-14)
        };
        prop_assert_eq!(diff == 0.0, coefficients_agree, "operator difference {}", diff);
        if !coefficients_agree {
            prop_assert!(diff > 1e-6, "perturbation invisible: {}", diff);
        }
    }

    #[test]
    fn action_gradient_pairs_with_schrodinger_operator(seed in any::<u64>()) {
        // Discrete action S = Σ_m Δt Σ_x W dV [Re(i ψ̄_m (ψ_{m+1} - ψ_{m-1}) / 2Δt) - ψ̄_m (Ĥψ)_m]
        // over slices m = 1..=3; its Wirtinger gradient at the middle slice is
        // i Δt dV W (S.ψ).
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = oscillator(1, 8.0, 120, 4);
        let grid = b.grid().unwrap();
        let dt = 0.01;
        let ham = quantum_operator(&SpecialQuadratic::hamiltonian(&b), &b, 0.0, 0.0).unwrap();
        let dv = grid.cell_volume();
        let w = ham.weight().to_vec();
        for _ in 0..10 {
            let base = random_packet(&mut rng, &grid, 8.0);
            let slices: Vec<Vec<C64>> = (0..5)
                .map(|m| {
                    let rot = C64::from_polar(1.0, -0.7 * m as f64 * dt);
                    base.values.iter().enumerate().map(|(i, v)| v * rot * (1.0 + 0.05 * m as f64 * grid.coords(i)[0])).collect()
                })
                .collect();
            let action = |s: &[Vec<C64>]| -> f64 {
                let mut total = 0.0;
                for m in 1..=3 {
                    let hpsi = ham.apply_values(&s[m]);
                    for i in 0..grid.len() {
                        let kinetic = (C64::new(0.0, 1.0) * s[m][i].conj() * (s[m + 1][i] - s[m - 1][i]) / (2.0 * dt)).re;
                        let energy = (s[m][i].conj() * hpsi[i] / w[i]).re;
                        total += dt * dv * w[i] * (kinetic - energy);
                    }
                }
                total
            };
            let at = |t: usize| WaveFunction { t: t as f64 * dt, grid: grid.clone(), values: slices[t].clone() };
            let (prev, cur, next) = (at(1), at(2), at(3));
            let s_psi = schrodinger_apply(&cur, &TimeSource::TwoSlice { prev: &prev, next: &next }, &b, 0.0).unwrap();
            let eps = 1e-6;
            for _ in 0..5 {
                let node = rng.random_range(grid.order()..grid.len() - grid.order());
                let mut grad = C64::new(0.0, 0.0);
                for (dir, unit) in [(0, C64::new(1.0, 0.0)), (1, C64::new(0.0, 1.0))] {
                    let mut plus = slices.clone();
                    let mut minus = slices.clone();
                    plus[2][node] += unit * eps;
                    minus[2][node] -= unit * eps;
                    let d = (action(&plus) - action(&minus)) / (2.0 * eps);
                    if dir == 0 { grad.re = d } else { grad.im = d }
                }
                // ∂S/∂Re + i ∂S/∂Im = 2 ∂S/∂ψ̄.
                let expected = 2.0 * C64::new(0.0, 1.0) * dt * dv * w[node] * s_psi[node];
                let scale = (dt * dv * w[node]).max(1e-300);
                prop_assert!(((grad - expected) / scale).norm() < 1e-5, "{} vs {}", grad, expected);
            }
        }
    }
}
