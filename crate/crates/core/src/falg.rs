//! Special quadratic functions `f = ½ f⁰ G_ij v^i v^j + f_i v^i + f̊` and
//! their Lie algebra.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{point_vars, Expr, Var, NVARS};
use crate::geometry::{spacetime_var, GeometryBundle, SpacelikeMetric, ValidationSampling};
use crate::phase::build_gamma;

/// Relative tolerance of the degree-two reconstruction check.
pub const EXTRACTION_TOL: f64 = 1e-9;
/// Threshold below which sampled coefficients count as zero.
pub const CLASSIFY_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum FalgError {
    #[error("function is not special quadratic in the velocities (residual {residual:e})")]
    NotSpecialQuadratic { residual: f64 },
    #[error("function is not quantisable: its time component depends on position")]
    NotQuantisable,
    #[error("dimension mismatch: function has n = {found}, bundle has n = {expected}")]
    Shape { expected: usize, found: usize },
}

#[derive(Clone, Debug)]
pub struct SpecialQuadratic {
    /// Time component `f⁰(t, x)`.
    pub f0: Expr,
    /// Linear coefficients `f_i(t, x)`.
    pub fi: Vec<Expr>,
    /// Base term `f̊(t, x)`.
    pub base: Expr,
}

impl SpecialQuadratic {
    pub fn new(f0: Expr, fi: Vec<Expr>, base: Expr) -> SpecialQuadratic {
        SpecialQuadratic { f0, fi, base }
    }

    pub fn n(&self) -> usize {
        self.fi.len()
    }

    /// The spacetime function `g(t, x)`.
    pub fn spacetime(n: usize, g: Expr) -> SpecialQuadratic {
        SpecialQuadratic::new(Expr::zero(), vec![Expr::zero(); n], g)
    }

    pub fn coordinate(n: usize, axis: usize) -> SpecialQuadratic {
        SpecialQuadratic::spacetime(n, Expr::x(axis))
    }

    /// Observed Hamiltonian `ℋ₀ = ½ G v v - A₀`.
    pub fn hamiltonian(bundle: &GeometryBundle) -> SpecialQuadratic {
        let n = bundle.n();
        SpecialQuadratic::new(Expr::one(), vec![Expr::zero(); n], -&bundle.potential[0])
    }

    /// Observed momentum component `𝒫_j = G_ji v^i + A_j`.
    pub fn momentum(bundle: &GeometryBundle, j: usize) -> SpecialQuadratic {
        let n = bundle.n();
        SpecialQuadratic::new(
            Expr::zero(),
            (0..n).map(|i| bundle.metric.g(j, i).clone()).collect(),
            bundle.potential[j + 1].clone(),
        )
    }

    /// The phase function represented, as an expression in `(t, x, v)`.
    pub fn to_expr(&self, metric: &SpacelikeMetric) -> Expr {
        let n = self.n();
        let mut quad = Expr::zero();
        if !self.f0.is_zero() {
            for i in 0..n {
                for j in 0..n {
                    quad = quad + metric.g(i, j) * Expr::v(i) * Expr::v(j);
                }
            }
        }
        let lin: Expr = self.fi.iter().enumerate().map(|(i, c)| c * Expr::v(i)).sum();
        0.5 * &self.f0 * quad + lin + &self.base
    }

    pub fn eval(&self, metric: &SpacelikeMetric, t: f64, x: &[f64], v: &[f64]) -> f64 {
        self.to_expr(metric).eval(&point_vars(t, x, v))
    }

    /// Recover the coefficients of a phase function assumed special
    /// quadratic, by substituting `v ∈ {0, ±e_i}`, and verify the
    /// reconstruction at pseudo-random points of the bundle's chart.
    pub fn extract(p: &Expr, bundle: &GeometryBundle) -> Result<SpecialQuadratic, FalgError> {
        let n = bundle.n();
        let at = |v: &[f64]| -> Expr {
            let pairs: Vec<(Var, Expr)> =
                (0..n).map(|i| (Var::v(i), Expr::constant(v[i]))).collect();
            p.subs_many(&pairs)
        };
        let unit = |i: usize, s: f64| -> Vec<f64> {
            let mut e = vec![0.0; n];
            e[i] = s;
            e
        };
        let p0 = at(&vec![0.0; n]);
        let plus: Vec<Expr> = (0..n).map(|i| at(&unit(i, 1.0))).collect();
        let minus: Vec<Expr> = (0..n).map(|i| at(&unit(i, -1.0))).collect();
        let fi = (0..n).map(|i| 0.5 * (&plus[i] - &minus[i])).collect();
        let f0 = (&plus[0] + &minus[0] - 2.0 * &p0) / bundle.metric.g(0, 0);
        let out = SpecialQuadratic::new(f0, fi, p0);
        let residual = reconstruction_residual(p, &out.to_expr(&bundle.metric), bundle);
        if residual > EXTRACTION_TOL {
            return Err(FalgError::NotSpecialQuadratic { residual });
        }
        Ok(out)
    }

    pub fn classify(&self, bundle: &GeometryBundle) -> Classification {
        let samples = ValidationSampling::default().points(&bundle.chart);
        let n = self.n();
        let grad: Vec<Expr> = (0..n).map(|i| self.f0.diff(Var::x(i))).collect();
        let dt = self.f0.diff(Var::T);
        let max_over = |e: &[&Expr]| -> f64 {
            samples
                .iter()
                .map(|(t, x)| {
                    let p = point_vars(*t, x, &[]);
                    e.iter().map(|c| c.eval(&p).abs()).fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        };
        let spatial = max_over(&grad.iter().collect::<Vec<_>>());
        let temporal = max_over(&[&dt]);
        let size = max_over(&[&self.f0]);
        let linear = max_over(&self.fi.iter().collect::<Vec<_>>());
        let quantisable = spatial <= CLASSIFY_TOL;
        let constant_time = quantisable && temporal <= CLASSIFY_TOL;
        let affine = size <= CLASSIFY_TOL;
        Classification {
            quantisable,
            constant_time,
            affine,
            spacetime: affine && linear <= CLASSIFY_TOL,
        }
    }
}

fn reconstruction_residual(p: &Expr, q: &Expr, bundle: &GeometryBundle) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f00d);
    let (pt, qt) = (p.compile(), q.compile());
    let mut worst: f64 = 0.0;
    for _ in 0..12 {
        let mut vars = [0.0; NVARS];
        vars[0] = rng.random_range(0.0..1.0);
        for (i, &(lo, hi)) in bundle.chart.extent.iter().enumerate() {
            vars[1 + i] = rng.random_range(lo..hi);
            vars[4 + i] = rng.random_range(-2.0..2.0);
        }
        let (a, b) = (pt.eval(&vars), qt.eval(&vars));
        worst = worst.max((a - b).abs() / (1.0 + a.abs().max(b.abs())));
    }
    worst
}

/// Position of a function in the chain
/// spacetime ⊂ affine ⊂ constant-time ⊂ quantisable ⊂ special quadratic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Classification {
    pub quantisable: bool,
    pub constant_time: bool,
    pub affine: bool,
    pub spacetime: bool,
}

impl Classification {
    pub fn is_consistent(&self) -> bool {
        (!self.spacetime || self.affine)
            && (!self.affine || self.constant_time)
            && (!self.constant_time || self.quantisable)
    }

    pub fn label(&self) -> &'static str {
        if self.spacetime {
            "spacetime"
        } else if self.affine {
            "affine"
        } else if self.constant_time {
            "constant-time"
        } else if self.quantisable {
            "quantisable"
        } else {
            "special-quadratic"
        }
    }
}

/// Poisson bracket `{f, g}` of two phase functions as an expression, from
/// the vertical Hamiltonian lift `(a, b)` of `df`:
/// `a^j = -G^{jk} ∂_{v^k} f`,
/// `b^j = G^{ji} (∂_i f - a^m (G_km Γ^k_i - G_ki Γ^k_m))`,
/// `Γ^k_i = K_i^k_0 + K_i^k_h v^h`.
pub fn poisson_expr(f: &Expr, g: &Expr, bundle: &GeometryBundle) -> Expr {
    let n = bundle.n();
    let m = &bundle.metric;
    let k = &bundle.total;
    let conn = |kk: usize, i: usize| -> Expr {
        (0..n).fold(k.get(i + 1, kk, 0).clone(), |acc, h| {
            acc + k.get(i + 1, kk, h + 1) * Expr::v(h)
        })
    };
    let gamma: Vec<Vec<Expr>> = (0..n).map(|kk| (0..n).map(|i| conn(kk, i)).collect()).collect();
    let dvf: Vec<Expr> = (0..n).map(|i| f.diff(Var::v(i))).collect();
    let a: Vec<Expr> = (0..n)
        .map(|j| -(0..n).map(|kk| m.inv(j, kk) * &dvf[kk]).sum::<Expr>())
        .collect();
    let lowered: Vec<Expr> = (0..n)
        .map(|i| {
            let mut e = f.diff(Var::x(i));
            for (mm, am) in a.iter().enumerate() {
                if am.is_zero() {
                    continue;
                }
                let twist: Expr = (0..n)
                    .map(|kk| m.g(kk, mm) * &gamma[kk][i] - m.g(kk, i) * &gamma[kk][mm])
                    .sum();
                e = e - am * twist;
            }
            e
        })
        .collect();
    let b: Vec<Expr> = (0..n)
        .map(|j| (0..n).map(|i| m.inv(j, i) * &lowered[i]).sum())
        .collect();
    (0..n)
        .map(|j| &a[j] * g.diff(Var::x(j)) + &b[j] * g.diff(Var::v(j)))
        .sum()
}

/// Derivative of a phase function along the second order connection:
/// `γ.g = ∂_t g + v^i ∂_i g + γ^i ∂_{v^i} g`.
pub fn gamma_derivative(g: &Expr, bundle: &GeometryBundle) -> Expr {
    let n = bundle.n();
    let gamma = build_gamma(bundle);
    let mut out = g.diff(Var::T);
    for i in 0..n {
        out = out + Expr::v(i) * g.diff(Var::x(i)) + gamma.expr(i) * g.diff(Var::v(i));
    }
    out
}

fn check_dims(f: &SpecialQuadratic, bundle: &GeometryBundle) -> Result<(), FalgError> {
    if f.n() != bundle.n() {
        return Err(FalgError::Shape {
            expected: bundle.n(),
            found: f.n(),
        });
    }
    Ok(())
}

/// `{f, g}` re-read as a special quadratic function; fails when the
/// Poisson bracket leaves the space.
pub fn poisson_special(
    f: &SpecialQuadratic,
    g: &SpecialQuadratic,
    bundle: &GeometryBundle,
) -> Result<SpecialQuadratic, FalgError> {
    check_dims(f, bundle)?;
    check_dims(g, bundle)?;
    let (pf, pg) = (f.to_expr(&bundle.metric), g.to_expr(&bundle.metric));
    SpecialQuadratic::extract(&poisson_expr(&pf, &pg, bundle), bundle)
}

/// `[[f, g]] = {f, g} + f⁰ γ.g - g⁰ γ.f`, as an unreduced expression.
pub fn special_bracket_expr(
    f: &SpecialQuadratic,
    g: &SpecialQuadratic,
    bundle: &GeometryBundle,
) -> Expr {
    let (pf, pg) = (f.to_expr(&bundle.metric), g.to_expr(&bundle.metric));
    let mut out = poisson_expr(&pf, &pg, bundle);
    if !f.f0.is_zero() {
        out = out + &f.f0 * gamma_derivative(&pg, bundle);
    }
    if !g.f0.is_zero() {
        out = out - &g.f0 * gamma_derivative(&pf, bundle);
    }
    out
}

pub fn special_bracket(
    f: &SpecialQuadratic,
    g: &SpecialQuadratic,
    bundle: &GeometryBundle,
) -> Result<SpecialQuadratic, FalgError> {
    check_dims(f, bundle)?;
    check_dims(g, bundle)?;
    SpecialQuadratic::extract(&special_bracket_expr(f, g, bundle), bundle)
}

/// A vector field `X^λ(t, x) ∂_λ` on spacetime.
#[derive(Clone, Debug)]
pub struct SpacetimeVectorField {
    pub comps: Vec<Expr>,
}

impl SpacetimeVectorField {
    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let p = point_vars(t, x, &[]);
        self.comps.iter().map(|c| c.eval(&p)).collect()
    }

    /// `[X, Y]^μ = X^ν ∂_ν Y^μ - Y^ν ∂_ν X^μ`.
    pub fn lie_bracket(&self, other: &SpacetimeVectorField) -> SpacetimeVectorField {
        let dim = self.comps.len();
        let comps = (0..dim)
            .map(|mu| {
                (0..dim)
                    .map(|nu| {
                        let var = spacetime_var(nu);
                        &self.comps[nu] * other.comps[mu].diff(var)
                            - &other.comps[nu] * self.comps[mu].diff(var)
                    })
                    .sum()
            })
            .collect();
        SpacetimeVectorField { comps }
    }
}

/// `X[f] = f⁰ ∂_0 - f^i ∂_i` with `f^i = G^{ij} f_j`.
pub fn tangent_lift(
    f: &SpecialQuadratic,
    bundle: &GeometryBundle,
) -> Result<SpacetimeVectorField, FalgError> {
    check_dims(f, bundle)?;
    if !f.classify(bundle).quantisable {
        return Err(FalgError::NotQuantisable);
    }
    let n = f.n();
    let mut comps = vec![f.f0.clone()];
    comps.extend((0..n).map(|i| -(0..n).map(|j| bundle.metric.inv(i, j) * &f.fi[j]).sum::<Expr>()));
    Ok(SpacetimeVectorField { comps })
}
