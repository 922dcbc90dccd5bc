//! Phase space `J₁E` with coordinates `(t, x^i, v^i)`.
//!
//! Basis ordering for component matrices is `(∂_t, ∂_{x^1..n}, ∂_{v^1..n})`,
//! so the velocity slot of spatial axis `i` is `1 + n + i`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{point_vars, Expr, Tape, Var};
use crate::geometry::{spacetime_var, FibredChart, GeometryBundle};

#[derive(Debug, Error, PartialEq)]
pub enum PhaseError {
    #[error("metric is degenerate at t = {t}, x = {x:?}")]
    Degenerate { t: f64, x: Vec<f64> },
    #[error("cosymplectic form has kernel dimension {dimension} at t = {t}")]
    Kernel { t: f64, dimension: usize },
    #[error("trajectory left the chart at t = {t}, x = {x:?}")]
    ChartExit { t: f64, x: Vec<f64> },
    #[error("integration needs at least one step")]
    Steps,
    #[error("phase point has {found} components, chart dimension is {expected}")]
    Shape { expected: usize, found: usize },
}

/// A point `(t, x, v)` of the jet space.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhasePoint {
    pub fn new(t: f64, x: Vec<f64>, v: Vec<f64>) -> PhasePoint {
        PhasePoint { t, x, v }
    }

    pub fn vars(&self) -> [f64; crate::expr::NVARS] {
        point_vars(self.t, &self.x, &self.v)
    }

    fn check(&self, n: usize) -> Result<(), PhaseError> {
        for len in [self.x.len(), self.v.len()] {
            if len != n {
                return Err(PhaseError::Shape {
                    expected: n,
                    found: len,
                });
            }
        }
        Ok(())
    }
}

/// Variable attached to basis slot `a` of the phase component matrices.
pub fn phase_var(n: usize, a: usize) -> Var {
    if a <= n {
        spacetime_var(a)
    } else {
        Var::v(a - n - 1)
    }
}

/// `Γ^i_λ = K_λ^i_0 + K_λ^i_h v^h`, the connection forms `θ^i = dv^i - Γ^i_λ dx^λ`.
fn connection_forms(bundle: &GeometryBundle) -> Vec<Vec<Expr>> {
    let n = bundle.n();
    (0..n)
        .map(|i| {
            (0..=n)
                .map(|lam| {
                    let k = &bundle.total;
                    (0..n).fold(k.get(lam, i, 0).clone(), |acc, h| {
                        acc + k.get(lam, i, h + 1) * Expr::v(h)
                    })
                })
                .collect()
        })
        .collect()
}

/// Components of `Ω = G_ij θ^i ∧ η^j` with `η^j = dx^j - v^j dt`.
#[derive(Clone, Debug)]
pub struct CosymplecticForm {
    n: usize,
    entries: Vec<Expr>,
    tapes: Vec<Tape>,
}

pub fn build_omega(bundle: &GeometryBundle) -> CosymplecticForm {
    let n = bundle.n();
    let dim = 2 * n + 1;
    let gamma = connection_forms(bundle);
    let theta: Vec<Vec<Expr>> = (0..n)
        .map(|i| {
            (0..dim)
                .map(|a| {
                    if a <= n {
                        -&gamma[i][a]
                    } else if a == n + 1 + i {
                        Expr::one()
                    } else {
                        Expr::zero()
                    }
                })
                .collect()
        })
        .collect();
    let eta: Vec<Vec<Expr>> = (0..n)
        .map(|j| {
            (0..dim)
                .map(|a| {
                    if a == 0 {
                        -Expr::v(j)
                    } else if a == j + 1 {
                        Expr::one()
                    } else {
                        Expr::zero()
                    }
                })
                .collect()
        })
        .collect();
    let mut entries = Vec::with_capacity(dim * dim);
    for a in 0..dim {
        for b in 0..dim {
            let mut e = Expr::zero();
            for i in 0..n {
                for j in 0..n {
                    let wedge = &theta[i][a] * &eta[j][b] - &theta[i][b] * &eta[j][a];
                    if !wedge.is_zero() {
                        e = e + bundle.metric.g(i, j) * wedge;
                    }
                }
            }
            entries.push(e);
        }
    }
    let tapes = entries.iter().map(Expr::compile).collect();
    CosymplecticForm { n, entries, tapes }
}

impl CosymplecticForm {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n + 1
    }

    pub fn entry(&self, a: usize, b: usize) -> &Expr {
        &self.entries[a * self.dim() + b]
    }

    pub fn eval(&self, p: &PhasePoint) -> DMatrix<f64> {
        let vars = p.vars();
        let dim = self.dim();
        let mut regs = Vec::new();
        DMatrix::from_fn(dim, dim, |a, b| self.tapes[a * dim + b].eval_with(&vars, &mut regs))
    }

    /// Numerical rank, counting singular values above `1e-10 σ_max`.
    pub fn rank(&self, p: &PhasePoint) -> usize {
        numerical_rank(&self.eval(p))
    }

    /// `max |Ω_ab + Ω_ba|` at a point.
    pub fn antisymmetry_residual(&self, p: &PhasePoint) -> f64 {
        let m = self.eval(p);
        (&m + m.transpose()).amax()
    }

    /// `max |(dΩ)_abc|` at a point, from exact partial derivatives.
    pub fn closure_residual(&self, p: &PhasePoint) -> f64 {
        let dim = self.dim();
        let vars = p.vars();
        let d = |c: usize, a: usize, b: usize| self.entry(a, b).diff(phase_var(self.n, c)).eval(&vars);
        let mut worst: f64 = 0.0;
        for a in 0..dim {
            for b in a + 1..dim {
                for c in b + 1..dim {
                    let r = d(a, b, c) + d(b, c, a) + d(c, a, b);
                    worst = worst.max(r.abs());
                }
            }
        }
        worst
    }
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let cutoff = 1e-10 * sv.max();
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// `γ^h = K_0^h_0 + 2 K_0^h_j v^j + K_i^h_j v^i v^j`.
#[derive(Clone, Debug)]
pub struct SecondOrderConnection {
    chart: FibredChart,
    accel: Vec<Expr>,
    tapes: Vec<Tape>,
    det: Tape,
}

pub fn build_gamma(bundle: &GeometryBundle) -> SecondOrderConnection {
    let n = bundle.n();
    let k = &bundle.total;
    let accel: Vec<Expr> = (0..n)
        .map(|h| {
            let mut e = k.get(0, h, 0).clone();
            for j in 0..n {
                e = e + 2.0 * k.get(0, h, j + 1) * Expr::v(j);
                for i in 0..n {
                    e = e + k.get(i + 1, h, j + 1) * Expr::v(i) * Expr::v(j);
                }
            }
            e
        })
        .collect();
    SecondOrderConnection {
        chart: bundle.chart.clone(),
        tapes: accel.iter().map(Expr::compile).collect(),
        det: bundle.metric.det().compile(),
        accel,
    }
}

impl SecondOrderConnection {
    pub fn n(&self) -> usize {
        self.accel.len()
    }

    pub fn chart(&self) -> &FibredChart {
        &self.chart
    }

    pub fn expr(&self, h: usize) -> &Expr {
        &self.accel[h]
    }

    pub fn accel(&self, p: &PhasePoint) -> Result<Vec<f64>, PhaseError> {
        p.check(self.n())?;
        let vars = p.vars();
        let det = self.det.eval(&vars);
        if !(det.abs() > 1e-300) || !det.is_finite() {
            return Err(PhaseError::Degenerate {
                t: p.t,
                x: p.x.clone(),
            });
        }
        let mut regs = Vec::new();
        Ok(self.tapes.iter().map(|t| t.eval_with(&vars, &mut regs)).collect())
    }

    /// `max |i_γ Ω|` for the vector field `(1, v, a)`.
    pub fn contraction_residual(&self, omega: &CosymplecticForm, p: &PhasePoint, a: &[f64]) -> f64 {
        let mut field = vec![1.0];
        field.extend_from_slice(&p.v);
        field.extend_from_slice(a);
        let field = DVector::from_vec(field);
        (omega.eval(p).transpose() * field).amax()
    }
}

/// Classical RK4 integration of `ẋ = v`, `v̇ = γ(t, x, v)`.
pub fn integrate_newton(
    gamma: &SecondOrderConnection,
    start: &PhasePoint,
    t_end: f64,
    steps: usize,
) -> Result<Vec<PhasePoint>, PhaseError> {
    if steps == 0 {
        return Err(PhaseError::Steps);
    }
    let n = gamma.n();
    start.check(n)?;
    let exit = |p: &PhasePoint| -> Result<(), PhaseError> {
        if gamma.chart.contains(&p.x) {
            Ok(())
        } else {
            Err(PhaseError::ChartExit {
                t: p.t,
                x: p.x.clone(),
            })
        }
    };
    exit(start)?;
    let dt = (t_end - start.t) / steps as f64;
    let rhs = |p: &PhasePoint| -> Result<(Vec<f64>, Vec<f64>), PhaseError> {
        Ok((p.v.clone(), gamma.accel(p)?))
    };
    let shift = |p: &PhasePoint, ds: f64, k: &(Vec<f64>, Vec<f64>)| PhasePoint {
        t: p.t + ds,
        x: p.x.iter().zip(&k.0).map(|(x, d)| x + ds * d).collect(),
        v: p.v.iter().zip(&k.1).map(|(v, d)| v + ds * d).collect(),
    };
    let mut out = Vec::with_capacity(steps + 1);
    out.push(start.clone());
    let mut p = start.clone();
    for step in 1..=steps {
        let k1 = rhs(&p)?;
        let k2 = rhs(&shift(&p, 0.5 * dt, &k1))?;
        let k3 = rhs(&shift(&p, 0.5 * dt, &k2))?;
        let k4 = rhs(&shift(&p, dt, &k3))?;
        let comb = |s: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
            (0..n)
                .map(|i| (s(&k1)[i] + 2.0 * s(&k2)[i] + 2.0 * s(&k3)[i] + s(&k4)[i]) / 6.0)
                .collect()
        };
        let dx = comb(|k| &k.0);
        let dv = comb(|k| &k.1);
        p = PhasePoint {
            t: start.t + step as f64 * dt,
            x: p.x.iter().zip(&dx).map(|(x, d)| x + dt * d).collect(),
            v: p.v.iter().zip(&dv).map(|(v, d)| v + dt * d).collect(),
        };
        exit(&p)?;
        out.push(p.clone());
    }
    Ok(out)
}

/// Lowered residual `G_hk (v̇^k - γ^k)` of the Euler–Lagrange operator along
/// a trajectory, with `v̇` from central differences. Maximum over the
/// interior samples.
pub fn euler_lagrange_residual(
    gamma: &SecondOrderConnection,
    bundle: &GeometryBundle,
    trajectory: &[PhasePoint],
) -> Result<f64, PhaseError> {
    let n = gamma.n();
    let mut worst: f64 = 0.0;
    for w in trajectory.windows(3) {
        let (prev, p, next) = (&w[0], &w[1], &w[2]);
        let a = gamma.accel(p)?;
        let g = bundle.metric.eval(p.t, &p.x);
        let diff: Vec<f64> = (0..n)
            .map(|k| (next.v[k] - prev.v[k]) / (next.t - prev.t) - a[k])
            .collect();
        for h in 0..n {
            let r: f64 = (0..n).map(|k| g[(h, k)] * diff[k]).sum();
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// Lagrangian, observed Hamiltonian and observed momentum.
#[derive(Clone, Debug)]
pub struct PoincareCartanSplit {
    pub lagrangian: Expr,
    pub hamiltonian: Expr,
    pub momentum: Vec<Expr>,
}

pub fn poincare_cartan_split(bundle: &GeometryBundle) -> PoincareCartanSplit {
    let n = bundle.n();
    let g = &bundle.metric;
    let a = &bundle.potential;
    let mut kinetic = Expr::zero();
    for i in 0..n {
        for j in 0..n {
            kinetic = kinetic + g.g(i, j) * Expr::v(i) * Expr::v(j);
        }
    }
    let kinetic = 0.5 * kinetic;
    let drift: Expr = (0..n).map(|i| &a[i + 1] * Expr::v(i)).sum();
    let momentum = (0..n)
        .map(|i| (0..n).map(|j| g.g(i, j) * Expr::v(j)).sum::<Expr>() + &a[i + 1])
        .collect();
    PoincareCartanSplit {
        lagrangian: &kinetic + drift + &a[0],
        hamiltonian: kinetic - &a[0],
        momentum,
    }
}

impl PoincareCartanSplit {
    pub fn lagrangian_at(&self, p: &PhasePoint) -> f64 {
        self.lagrangian.eval(&p.vars())
    }

    pub fn hamiltonian_at(&self, p: &PhasePoint) -> f64 {
        self.hamiltonian.eval(&p.vars())
    }

    pub fn momentum_at(&self, p: &PhasePoint) -> Vec<f64> {
        let vars = p.vars();
        self.momentum.iter().map(|m| m.eval(&vars)).collect()
    }
}

/// Partial derivatives of a phase function in the basis order.
pub fn gradient(f: &Expr, p: &PhasePoint) -> Vec<f64> {
    let n = p.x.len();
    let vars = p.vars();
    (0..2 * n + 1).map(|a| f.diff(phase_var(n, a)).eval(&vars)).collect()
}

/// Vertical Hamiltonian lift `(0, a, b)` of a differential, solving
/// `(i_X Ω)_c = df_c` for every vertical basis slot `c`.
pub fn hamiltonian_lift(
    omega_at: &DMatrix<f64>,
    df: &[f64],
    t: f64,
) -> Result<DVector<f64>, PhaseError> {
    let dim = omega_at.nrows();
    let rank = numerical_rank(omega_at);
    if rank + 1 != dim {
        return Err(PhaseError::Kernel {
            t,
            dimension: dim - rank,
        });
    }
    let vert = dim - 1;
    // (i_X Ω)_c = Σ_b X^b Ω_bc, restricted to b, c ≥ 1.
    let sys = DMatrix::from_fn(vert, vert, |c, b| omega_at[(b + 1, c + 1)]);
    let rhs = DVector::from_iterator(vert, df[1..].iter().copied());
    let sol = sys.lu().solve(&rhs).ok_or(PhaseError::Kernel { t, dimension: 0 })?;
    let mut x = DVector::zeros(dim);
    x.rows_mut(1, vert).copy_from(&sol);
    Ok(x)
}

/// `{f, g} = H[f].g` from gradients at a point.
pub fn poisson_from_gradients(
    omega_at: &DMatrix<f64>,
    df: &[f64],
    dg: &[f64],
    t: f64,
) -> Result<f64, PhaseError> {
    let lift = hamiltonian_lift(omega_at, df, t)?;
    Ok(lift.iter().zip(dg).map(|(x, d)| x * d).sum())
}

pub fn poisson_bracket(
    f: &Expr,
    g: &Expr,
    omega: &CosymplecticForm,
    at: &PhasePoint,
) -> Result<f64, PhaseError> {
    at.check(omega.n())?;
    poisson_from_gradients(&omega.eval(at), &gradient(f, at), &gradient(g, at), at.t)
}

/// Write trajectory rows `step, t, x1..xn, v1..vn, H0` as CSV.
pub fn write_trajectory_csv<W: Write>(
    mut out: W,
    trajectory: &[PhasePoint],
    split: &PoincareCartanSplit,
) -> io::Result<()> {
    let n = trajectory.first().map_or(0, |p| p.x.len());
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("v{i}")));
    header.push("H0".into());
    writeln!(out, "{}", header.join(","))?;
    for (step, p) in trajectory.iter().enumerate() {
        let mut row = vec![step.to_string(), format!("{:.17e}", p.t)];
        row.extend(p.x.iter().chain(&p.v).map(|c| format!("{c:.17e}")));
        row.push(format!("{:.17e}", split.hamiltonian_at(p)));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
