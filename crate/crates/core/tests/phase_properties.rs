mod common;

use common::*;
use cqm_core::falg::poisson_expr;
use cqm_core::phase::{build_gamma, build_omega, integrate_newton, poincare_cartan_split, poisson_bracket, PhasePoint};
use cqm_core::{Expr, GeometryBundle};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_phase_function(rng: &mut ChaCha8Rng, n: usize) -> Expr {
    let mut f = random_spacetime_expr(rng, n, 0.5);
    for i in 0..n {
        f = f + random_spacetime_expr(rng, n, 0.3) * Expr::v(i);
        f = f + rng.random_range(-0.5..0.5) * Expr::v(i) * Expr::v((i + 1) % n) * Expr::x(i);
    }
    f
}

fn coordinate_function(n: usize, k: usize) -> Expr {
    if k < n {
        Expr::x(k)
    } else {
        Expr::v(k - n)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn connection_is_the_unique_kernel_direction(seed in any::<u64>(), n in 1usize..=3, eps in 1e-4f64..1e-1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_bundle(&mut rng, n);
        let (om, gamma) = (build_omega(&b), build_gamma(&b));
        let (t, x, v) = random_point(&mut rng, n, 1.0);
        let p = PhasePoint::new(t, x, v);
        let a = gamma.accel(&p).unwrap();
        prop_assert!(gamma.contraction_residual(&om, &p, &a) < 1e-10);
        let h = rng.random_range(0..n);
        let bumped = |e: f64| {
            let mut a = a.clone();
            a[h] += e;
            gamma.contraction_residual(&om, &p, &a)
        };
        let (r1, r2) = (bumped(eps), bumped(2.0 * eps));
        prop_assert!(r1 > 0.1 * eps, "residual {} for {}", r1, eps);
        prop_assert!((r2 / r1 - 2.0).abs() < 1e-6, "ratio {}", r2 / r1);
    }

    #[test]
    fn poisson_bracket_antisymmetry_leibniz_and_routes(seed in any::<u64>(), n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_bundle(&mut rng, n);
        let om = build_omega(&b);
        let f = random_phase_function(&mut rng, n);
        let g = random_phase_function(&mut rng, n);
        let (k1, k2) = (rng.random_range(0..2 * n), rng.random_range(0..2 * n));
        let (c1, c2) = (coordinate_function(n, k1), coordinate_function(n, k2));
        let product = &c1 * &c2;
        let symbolic = poisson_expr(&f, &g, &b);
        for _ in 0..5 {
            let (t, x, v) = random_point(&mut rng, n, 1.0);
            let p = PhasePoint::new(t, x, v);
            let vars = p.vars();
            let fg = poisson_bracket(&f, &g, &om, &p).unwrap();
            let gf = poisson_bracket(&g, &f, &om, &p).unwrap();
            prop_assert!((fg + gf).abs() < 1e-8, "{} vs {}", fg, gf);
            prop_assert!((fg - symbolic.eval(&vars)).abs() < 1e-8 * (1.0 + fg.abs()));
            let lhs = poisson_bracket(&product, &g, &om, &p).unwrap();
            let rhs = c1.eval(&vars) * poisson_bracket(&c2, &g, &om, &p).unwrap()
                + c2.eval(&vars) * poisson_bracket(&c1, &g, &om, &p).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-8 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
        }
    }

    #[test]
    fn energy_drift_is_fourth_order(
        omega2 in 0.5f64..2.0,
        quartic in 0.0f64..0.2,
        coupling in -0.2f64..0.2,
        x0 in -1.0f64..1.0,
        v0 in -1.0f64..1.0,
    ) {
        let (x, y) = (Expr::x(0), Expr::x(1));
        let a0 = -(0.5 * omega2 * (x.square() + y.square()) + quartic * x.powi(4) + coupling * &x * &y);
        let b = GeometryBundle::from_potential(
            chart(vec![(-10.0, 10.0); 2], vec![8; 2], 2),
            cqm_core::SpacelikeMetric::flat(2),
            vec![a0, Expr::zero(), Expr::zero()],
        )
        .unwrap();
        let gamma = build_gamma(&b);
        let split = poincare_cartan_split(&b);
        let start = PhasePoint::new(0.0, vec![x0, 0.5], vec![v0, -0.3]);
        let e0 = split.hamiltonian_at(&start);
        let drift = |steps: usize| {
            let tr = integrate_newton(&gamma, &start, 4.0, steps).unwrap();
            tr.iter().map(|p| (split.hamiltonian_at(p) - e0).abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (drift(100), drift(200));
        let rate = (coarse / fine).log2();
        prop_assert!(rate > 3.5, "rate {} ({} -> {})", rate, coarse, fine);
    }
}
