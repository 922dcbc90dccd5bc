//! Grid operators acting on wave functions `ψ(t, x)`.
//!
//! All operators share one discretisation. A fibrewise operator `f̂` is
//! assembled as a Hermitian "stiffness" matrix `B = W f̂` with
//! `W = diag(√|g|)`, so that `f̂ = W⁻¹ B` is Hermitian for the weighted inner
//! product `Σ conj(ψ₁) ψ₂ √|g| dV`. Second order terms use the conservative
//! form `W Δ̊ = -Σ D̊_h† (√|g| G^{hk}) D̊_k`: diagonal terms with staggered
//! differences at cell midpoints, mixed terms with central differences at
//! the nodes. Gauge covariant differences carry link phases
//! `exp(-i A_k (x_b - x_a))` with `A_k` sampled at the link midpoint, which
//! makes them exact on `exp(i a x)` for constant `a`. Values beyond the box
//! walls are zero.

use num_complex::Complex64;
use thiserror::Error;

use crate::expr::{point_vars, Expr, Tape, Var};
use crate::falg::{special_bracket, FalgError, SpecialQuadratic};
use crate::geometry::{scalar_curvature, GeometryBundle, GeometryError};
use crate::grid::{Grid, GridError};
use crate::sparse::{CsrMatrix, Triplets};

pub type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);

/// Cells next to the walls inspected by the support check.
pub const SUPPORT_CELLS: usize = 5;
/// Largest admissible fraction of the mass inside the support band.
pub const SUPPORT_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum QuantumError {
    #[error(transparent)]
    Falg(#[from] FalgError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("time component of the function varies in space at t = {t}")]
    SpatiallyVaryingTimeComponent { t: f64 },
    #[error("a time derivative is needed but no time stencil was supplied")]
    MissingTimeStencil,
    #[error("test state is not compactly supported: fraction {fraction:e} of its mass lies within {cells} cells of the wall")]
    TestState { fraction: f64, cells: usize },
    #[error("wave function lives on a different grid or has {found} values for {expected} nodes")]
    GridMismatch { expected: usize, found: usize },
}

/// Samples of `ψ` on the chart grid at time `t`, in the fixed trivialisation.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveFunction {
    pub t: f64,
    pub grid: Grid,
    pub values: Vec<C64>,
}

impl WaveFunction {
    pub fn zeros(grid: &Grid, t: f64) -> WaveFunction {
        WaveFunction {
            t,
            grid: grid.clone(),
            values: vec![C64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_fn(grid: &Grid, t: f64, f: impl Fn(&[f64]) -> C64) -> WaveFunction {
        let n = grid.n();
        WaveFunction {
            t,
            grid: grid.clone(),
            values: (0..grid.len()).map(|i| f(&grid.coords(i)[..n])).collect(),
        }
    }

    pub fn with_values(&self, values: Vec<C64>) -> WaveFunction {
        WaveFunction {
            t: self.t,
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Time dependence of a state, needed by operators containing `∂₀`.
pub enum TimeSource<'a> {
    /// A closed-form family `t ↦ ψ(t)` differentiated with a fourth order
    /// stencil of step `dt`.
    Analytic {
        family: &'a dyn Fn(f64) -> Vec<C64>,
        dt: f64,
    },
    /// Central difference of two slices around the evaluation time.
    TwoSlice {
        prev: &'a WaveFunction,
        next: &'a WaveFunction,
    },
}

impl TimeSource<'_> {
    pub fn derivative(&self, t: f64) -> Vec<C64> {
        match self {
            TimeSource::Analytic { family, dt } => time_derivative(*family, t, *dt),
            TimeSource::TwoSlice { prev, next } => {
                let span = next.t - prev.t;
                prev.values
                    .iter()
                    .zip(&next.values)
                    .map(|(a, b)| (b - a) / span)
                    .collect()
            }
        }
    }
}

/// Fourth order central derivative of a time family.
pub fn time_derivative(family: &dyn Fn(f64) -> Vec<C64>, t: f64, dt: f64) -> Vec<C64> {
    let (m2, m1, p1, p2) = (family(t - 2.0 * dt), family(t - dt), family(t + dt), family(t + 2.0 * dt));
    (0..m1.len())
        .map(|i| (m2[i] - 8.0 * m1[i] + 8.0 * p1[i] - p2[i]) / (12.0 * dt))
        .collect()
}

/// Staggered first-derivative weights on the `order` nodes around a midpoint.
pub fn staggered_coefficients(order: usize) -> &'static [f64] {
    match order {
        2 => &[-1.0, 1.0],
        4 => &[1.0 / 24.0, -9.0 / 8.0, 9.0 / 8.0, -1.0 / 24.0],
        6 => &[
            -3.0 / 640.0,
            25.0 / 384.0,
            -75.0 / 64.0,
            75.0 / 64.0,
            -25.0 / 384.0,
            3.0 / 640.0,
        ],
        8 => &[
            5.0 / 7168.0,
            -49.0 / 5120.0,
            245.0 / 3072.0,
            -1225.0 / 1024.0,
            1225.0 / 1024.0,
            -245.0 / 3072.0,
            49.0 / 5120.0,
            -5.0 / 7168.0,
        ],
        _ => unreachable!("grid orders are validated on construction"),
    }
}

/// Central first-derivative weights for offsets `-order/2..=order/2`.
pub fn central_coefficients(order: usize) -> &'static [f64] {
    match order {
        2 => &[-0.5, 0.0, 0.5],
        4 => &[1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0],
        6 => &[-1.0 / 60.0, 3.0 / 20.0, -3.0 / 4.0, 0.0, 3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0],
        8 => &[
            1.0 / 280.0,
            -4.0 / 105.0,
            1.0 / 5.0,
            -4.0 / 5.0,
            0.0,
            4.0 / 5.0,
            -1.0 / 5.0,
            4.0 / 105.0,
            -1.0 / 280.0,
        ],
        _ => unreachable!("grid orders are validated on construction"),
    }
}

/// Evaluate an expression at every node.
pub fn node_values(grid: &Grid, t: f64, e: &Expr) -> Vec<f64> {
    let tape = e.compile();
    let mut regs = Vec::new();
    let n = grid.n();
    (0..grid.len())
        .map(|i| tape.eval_with(&point_vars(t, &grid.coords(i)[..n], &[]), &mut regs))
        .collect()
}

struct Potential {
    tape: Option<Tape>,
    t: f64,
    n: usize,
}

impl Potential {
    fn new(a: Option<&Expr>, t: f64, n: usize) -> Potential {
        Potential {
            tape: a.filter(|e| !e.is_zero()).map(Expr::compile),
            t,
            n,
        }
    }

    /// Parallel transport factor from `from` to `to` along `axis`.
    fn link(&self, from: &[f64; 3], to: &[f64; 3], axis: usize) -> C64 {
        match &self.tape {
            None => C64::new(1.0, 0.0),
            Some(tape) => {
                let mut mid = [0.0; 3];
                for k in 0..3 {
                    mid[k] = 0.5 * (from[k] + to[k]);
                }
                let a = tape.eval(&point_vars(self.t, &mid[..self.n], &[]));
                (-I * a * (to[axis] - from[axis])).exp()
            }
        }
    }
}

/// Central difference matrix along `axis`, gauge covariant when a potential
/// component is supplied.
pub fn central_matrix(grid: &Grid, axis: usize, potential: Option<&Expr>, t: f64) -> CsrMatrix {
    let coeffs = central_coefficients(grid.order());
    let reach = (coeffs.len() / 2) as isize;
    let h = grid.spacing(axis);
    let pot = Potential::new(potential, t, grid.n());
    let mut trip = Triplets::new(grid.len(), grid.len());
    for p in 0..grid.len() {
        let xp = grid.coords(p);
        for (s, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            if let Some(q) = grid.neighbour(p, axis, s as isize - reach) {
                trip.push(p, q, pot.link(&xp, &grid.coords(q), axis) * (c / h));
            }
        }
    }
    trip.to_csr()
}

/// Staggered difference matrix from nodes to the midpoints along `axis`,
/// and the midpoint positions of its rows.
pub fn staggered_matrix(
    grid: &Grid,
    axis: usize,
    potential: Option<&Expr>,
    t: f64,
) -> (CsrMatrix, Vec<[f64; 3]>) {
    let coeffs = staggered_coefficients(grid.order());
    let half = (coeffs.len() / 2) as isize;
    let dims = grid.dims();
    let nax = dims[axis] as isize;
    let h = grid.spacing(axis);
    let pot = Potential::new(potential, t, grid.n());
    let bases: Vec<usize> = (0..grid.len())
        .filter(|&i| grid.multi_index(i)[axis] == 0)
        .collect();
    let mut mids = Vec::new();
    let mut entries = Vec::new();
    for &base in &bases {
        let base_x = grid.coords(base);
        for m in -half..=nax - 2 + half {
            let mut xm = base_x;
            xm[axis] = grid.axis_coord(axis, m as f64 + 0.5);
            let row = mids.len();
            let mut any = false;
            for (s, &c) in coeffs.iter().enumerate() {
                let k = m - (half - 1) + s as isize;
                if k < 0 || k >= nax {
                    continue;
                }
                let col = base + k as usize * grid.stride(axis);
                let xk = grid.coords(col);
                entries.push((row, col, pot.link(&xm, &xk, axis) * (c / h)));
                any = true;
            }
            if any {
                mids.push(xm);
            }
        }
    }
    let mut trip = Triplets::new(mids.len(), grid.len());
    for (r, c, v) in entries {
        trip.push(r, c, v);
    }
    (trip.to_csr(), mids)
}

/// `Σ_r conj(D_ra) m_r D_rb` accumulated into `out`.
fn accumulate_gram(out: &mut Triplets, dh: &CsrMatrix, dk: &CsrMatrix, m: &[f64]) {
    for r in 0..dh.nrows() {
        if m[r] == 0.0 {
            continue;
        }
        for (a, ca) in dh.row(r) {
            for (b, cb) in dk.row(r) {
                out.push(a, b, ca.conj() * m[r] * cb);
            }
        }
    }
}

/// Shared per-time data of a bundle on a grid.
struct Frame<'a> {
    bundle: &'a GeometryBundle,
    grid: &'a Grid,
    t: f64,
    weight: Vec<f64>,
}

impl<'a> Frame<'a> {
    fn new(bundle: &'a GeometryBundle, grid: &'a Grid, t: f64) -> Frame<'a> {
        Frame {
            bundle,
            grid,
            t,
            weight: node_values(grid, t, bundle.metric.sqrt_det()),
        }
    }

    fn n(&self) -> usize {
        self.grid.n()
    }

    /// `Σ D̊_h† (√|g| G^{hk}) D̊_k`, the positive kinetic stiffness.
    fn kinetic(&self) -> CsrMatrix {
        let n = self.n();
        let len = self.grid.len();
        let metric = &self.bundle.metric;
        let mut out = Triplets::new(len, len);
        for a in 0..n {
            let (d, mids) = staggered_matrix(self.grid, a, Some(&self.bundle.potential[a + 1]), self.t);
            let coeff = (metric.sqrt_det() * metric.inv(a, a)).compile();
            let m: Vec<f64> = mids
                .iter()
                .map(|x| coeff.eval(&point_vars(self.t, &x[..n], &[])))
                .collect();
            accumulate_gram(&mut out, &d, &d, &m);
        }
        let centrals: Vec<CsrMatrix> = (0..n)
            .map(|a| central_matrix(self.grid, a, Some(&self.bundle.potential[a + 1]), self.t))
            .collect();
        for h in 0..n {
            for k in 0..n {
                if h == k || metric.inv(h, k).is_zero() {
                    continue;
                }
                let m = node_values(self.grid, self.t, &(metric.sqrt_det() * metric.inv(h, k)));
                accumulate_gram(&mut out, &centrals[h], &centrals[k], &m);
            }
        }
        out.to_csr()
    }

    fn values(&self, e: &Expr) -> Vec<f64> {
        node_values(self.grid, self.t, e)
    }
}

fn check_grid(psi: &WaveFunction, grid: &Grid) -> Result<(), QuantumError> {
    if psi.grid != *grid || psi.values.len() != grid.len() {
        return Err(QuantumError::GridMismatch {
            expected: grid.len(),
            found: psi.values.len(),
        });
    }
    Ok(())
}

fn bundle_grid(bundle: &GeometryBundle) -> Result<Grid, QuantumError> {
    Ok(bundle.grid()?)
}

/// `ρ = ∂₀√|g| / √|g|`.
pub fn density_rate(bundle: &GeometryBundle) -> Expr {
    let w = bundle.metric.sqrt_det();
    w.diff(Var::T) / w
}

/// `∇̊_λ ψ = ∂_λ ψ - i A_λ ψ`; `λ = 0` needs a time source.
pub fn covariant_derivative(
    psi: &WaveFunction,
    bundle: &GeometryBundle,
    lambda: usize,
    time: Option<&TimeSource>,
) -> Result<Vec<C64>, QuantumError> {
    let grid = bundle_grid(bundle)?;
    check_grid(psi, &grid)?;
    if lambda == 0 {
        let dt = time.ok_or(QuantumError::MissingTimeStencil)?.derivative(psi.t);
        let a0 = node_values(&grid, psi.t, &bundle.potential[0]);
        Ok((0..grid.len()).map(|i| dt[i] - I * a0[i] * psi.values[i]).collect())
    } else {
        let d = central_matrix(&grid, lambda - 1, Some(&bundle.potential[lambda]), psi.t);
        Ok(d.matvec(&psi.values))
    }
}

/// Kinetic stiffness and weights of the bundle at time `t`.
pub fn kinetic_stiffness(bundle: &GeometryBundle, t: f64) -> Result<(CsrMatrix, Vec<f64>), QuantumError> {
    let grid = bundle_grid(bundle)?;
    let frame = Frame::new(bundle, &grid, t);
    Ok((frame.kinetic(), frame.weight))
}

/// `Δ̊₀ ψ = G^{hk} ∇̊_h ∇̊_k ψ + K_h^k_h ∇̊_k ψ` for the metric connection, in
/// the conservative form `(1/√|g|) ∇̊_h (√|g| G^{hk} ∇̊_k ψ)`.
pub fn curved_laplacian(psi: &WaveFunction, bundle: &GeometryBundle) -> Result<Vec<C64>, QuantumError> {
    let grid = bundle_grid(bundle)?;
    check_grid(psi, &grid)?;
    let frame = Frame::new(bundle, &grid, psi.t);
    let l = frame.kinetic().matvec(&psi.values);
    Ok(l.iter().zip(&frame.weight).map(|(v, w)| -v / *w).collect())
}

fn curvature_values(bundle: &GeometryBundle, grid: &Grid, t: f64) -> Result<Vec<f64>, QuantumError> {
    Ok(scalar_curvature(&bundle.metric, grid, t)?.values)
}

/// `S.ψ = (∇̊₀ + ½ ∂₀√|g|/√|g|) ψ - (i/2)(Δ̊₀ - k r) ψ`.
pub fn schrodinger_apply(
    psi: &WaveFunction,
    time: &TimeSource,
    bundle: &GeometryBundle,
    k_factor: f64,
) -> Result<Vec<C64>, QuantumError> {
    let grid = bundle_grid(bundle)?;
    let nabla0 = covariant_derivative(psi, bundle, 0, Some(time))?;
    let rho = node_values(&grid, psi.t, &density_rate(bundle));
    let lap = curved_laplacian(psi, bundle)?;
    let r = if k_factor != 0.0 {
        curvature_values(bundle, &grid, psi.t)?
    } else {
        vec![0.0; grid.len()]
    };
    Ok((0..grid.len())
        .map(|i| {
            nabla0[i] + 0.5 * rho[i] * psi.values[i]
                - 0.5 * I * (lap[i] - k_factor * r[i] * psi.values[i])
        })
        .collect())
}

/// Components of `Y[f] = f⁰ ∂₀ - f^j ∂_j + Y_z z∂_z`.
#[derive(Clone, Debug)]
pub struct QuantumVectorField {
    pub y0: Expr,
    /// `-f^j`, with `f^j = G^{jk} f_k`.
    pub yj: Vec<Expr>,
    /// `-½ Div X[f]`.
    pub yz_re: Expr,
    /// `f⁰ A₀ - f^h A_h + f̊`.
    pub yz_im: Expr,
}

fn raised(f: &SpecialQuadratic, bundle: &GeometryBundle) -> Vec<Expr> {
    let n = f.n();
    (0..n)
        .map(|j| (0..n).map(|k| bundle.metric.inv(j, k) * &f.fi[k]).sum())
        .collect()
}

pub fn quantum_vector_field(
    f: &SpecialQuadratic,
    bundle: &GeometryBundle,
) -> Result<QuantumVectorField, QuantumError> {
    if !f.classify(bundle).quantisable {
        return Err(FalgError::NotQuantisable.into());
    }
    let n = f.n();
    let up = raised(f, bundle);
    let w = bundle.metric.sqrt_det();
    let spatial_div: Expr = (0..n).map(|j| (&up[j] * w).diff(Var::x(j))).sum::<Expr>() / w;
    let div = &f.f0 * density_rate(bundle) - spatial_div;
    let gauge: Expr = (0..n).map(|h| &up[h] * &bundle.potential[h + 1]).sum();
    Ok(QuantumVectorField {
        y0: f.f0.clone(),
        yj: up.iter().map(|e| -e).collect(),
        yz_re: -0.5 * div,
        yz_im: &f.f0 * &bundle.potential[0] - gauge + &f.base,
    })
}

/// `Y[f]•ψ = Y⁰ ∂₀ψ + Y^j ∂_jψ - Y_z ψ`.
pub fn apply_vector_field(
    y: &QuantumVectorField,
    psi: &WaveFunction,
    time: Option<&TimeSource>,
    bundle: &GeometryBundle,
) -> Result<Vec<C64>, QuantumError> {
    let grid = bundle_grid(bundle)?;
    check_grid(psi, &grid)?;
    let t = psi.t;
    let y0 = node_values(&grid, t, &y.y0);
    let mut out: Vec<C64> = {
        let re = node_values(&grid, t, &y.yz_re);
        let im = node_values(&grid, t, &y.yz_im);
        (0..grid.len()).map(|i| -C64::new(re[i], im[i]) * psi.values[i]).collect()
    };
    if y0.iter().any(|&c| c != 0.0) {
        let dt = time.ok_or(QuantumError::MissingTimeStencil)?.derivative(t);
        for i in 0..grid.len() {
            out[i] += y0[i] * dt[i];
        }
    }
    for (j, yj) in y.yj.iter().enumerate() {
        if yj.is_zero() {
            continue;
        }
        let c = node_values(&grid, t, yj);
        let d = central_matrix(&grid, j, None, t).matvec(&psi.values);
        for i in 0..grid.len() {
            out[i] += c[i] * d[i];
        }
    }
    Ok(out)
}

/// `Z[f]ψ = i Y[f]•ψ`.
pub fn lie_action(
    f: &SpecialQuadratic,
    psi: &WaveFunction,
    time: Option<&TimeSource>,
    bundle: &GeometryBundle,
) -> Result<WaveFunction, QuantumError> {
    let y = quantum_vector_field(f, bundle)?;
    let v = apply_vector_field(&y, psi, time, bundle)?;
    Ok(psi.with_values(v.into_iter().map(|c| I * c).collect()))
}

/// The fibrewise operator
/// `f̂ = -½ f⁰ Δ̊₀ - i f^j ∇̊_j + f̊ + ½ k f⁰ r - (i/2) ∂_j(f^j √|g|)/√|g|`
/// at a fixed time.
#[derive(Clone, Debug)]
pub struct QuantumOperator {
    pub source: SpecialQuadratic,
    pub curvature_factor: f64,
    pub t: f64,
    grid: Grid,
    weight: Vec<f64>,
    stiffness: CsrMatrix,
}

pub fn quantum_operator(
    f: &SpecialQuadratic,
    bundle: &GeometryBundle,
    k_factor: f64,
    t: f64,
) -> Result<QuantumOperator, QuantumError> {
    if !f.classify(bundle).quantisable {
        return Err(FalgError::NotQuantisable.into());
    }
    let grid = bundle_grid(bundle)?;
    let frame = Frame::new(bundle, &grid, t);
    let len = grid.len();
    let f0_nodes = frame.values(&f.f0);
    let f0 = f0_nodes[0];
    if f0_nodes.iter().any(|v| (v - f0).abs() > 1e-12 * (1.0 + f0.abs())) {
        return Err(QuantumError::SpatiallyVaryingTimeComponent { t });
    }
    let mut b = Triplets::new(len, len);
    if f0 != 0.0 {
        let kin = frame.kinetic();
        for r in 0..len {
            for (c, v) in kin.row(r) {
                b.push(r, c, 0.5 * f0 * v);
            }
        }
    }
    let up = raised(f, bundle);
    for (j, fj) in up.iter().enumerate() {
        if fj.is_zero() {
            continue;
        }
        let p: Vec<f64> = frame
            .values(fj)
            .iter()
            .zip(&frame.weight)
            .map(|(a, w)| a * w)
            .collect();
        let d = central_matrix(&grid, j, Some(&bundle.potential[j + 1]), t);
        for r in 0..len {
            for (c, v) in d.row(r) {
                b.push(r, c, -0.5 * I * v * (p[r] + p[c]));
            }
        }
    }
    let base = frame.values(&f.base);
    let curv = if k_factor != 0.0 && f0 != 0.0 {
        curvature_values(bundle, &grid, t)?
    } else {
        vec![0.0; len]
    };
    for i in 0..len {
        let d = frame.weight[i] * (base[i] + 0.5 * k_factor * f0 * curv[i]);
        b.push(i, i, C64::new(d, 0.0));
    }
    Ok(QuantumOperator {
        source: f.clone(),
        curvature_factor: k_factor,
        t,
        weight: frame.weight,
        grid,
        stiffness: b.to_csr(),
    })
}

impl QuantumOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `√|g|` at the nodes.
    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    /// The Hermitian matrix `W f̂`.
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn apply_values(&self, values: &[C64]) -> Vec<C64> {
        self.stiffness
            .matvec(values)
            .iter()
            .zip(&self.weight)
            .map(|(v, w)| v / *w)
            .collect()
    }

    pub fn apply(&self, psi: &WaveFunction) -> Result<WaveFunction, QuantumError> {
        check_grid(psi, &self.grid)?;
        Ok(psi.with_values(self.apply_values(&psi.values)))
    }
}

/// Fraction of the weighted mass of `ψ` within `cells` of a wall.
pub fn boundary_mass_fraction(psi: &WaveFunction, weight: &[f64], cells: usize) -> f64 {
    let mut total = 0.0;
    let mut edge = 0.0;
    for (i, v) in psi.values.iter().enumerate() {
        let m = v.norm_sqr() * weight[i];
        total += m;
        if psi.grid.wall_distance(i) < cells {
            edge += m;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        edge / total
    }
}

pub fn check_support(psi: &WaveFunction, bundle: &GeometryBundle) -> Result<(), QuantumError> {
    let weight = node_values(&psi.grid, psi.t, bundle.metric.sqrt_det());
    let fraction = boundary_mass_fraction(psi, &weight, SUPPORT_CELLS);
    if fraction > SUPPORT_TOL {
        return Err(QuantumError::TestState {
            fraction,
            cells: SUPPORT_CELLS,
        });
    }
    Ok(())
}

/// Both sides of `[f̂, ĝ] = [[f, g]]^ + [g⁰ Y[f]• - f⁰ Y[g]•, S]` on a state,
/// with `[A, B] = -i(AB - BA)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CommutatorReport {
    pub lhs: Vec<C64>,
    pub rhs: Vec<C64>,
    /// Max-norm of the obstruction term (zero when it is dropped).
    pub obstruction_norm: f64,
    pub obstruction_included: bool,
    /// Max-norm of `lhs - rhs` over nodes at least `margin` cells from the walls.
    pub residual: f64,
    pub margin: usize,
}

/// Evaluate the commutator identity at time `t` on an analytic-in-time state.
pub fn commutator_check(
    f: &SpecialQuadratic,
    g: &SpecialQuadratic,
    family: &dyn Fn(f64) -> Vec<C64>,
    t: f64,
    bundle: &GeometryBundle,
    k_factor: f64,
    dt: f64,
) -> Result<CommutatorReport, QuantumError> {
    let grid = bundle_grid(bundle)?;
    let psi = WaveFunction {
        t,
        grid: grid.clone(),
        values: family(t),
    };
    check_grid(&psi, &grid)?;
    check_support(&psi, bundle)?;
    let fh = quantum_operator(f, bundle, k_factor, t)?;
    let gh = quantum_operator(g, bundle, k_factor, t)?;
    let fg = fh.apply_values(&gh.apply_values(&psi.values));
    let gf = gh.apply_values(&fh.apply_values(&psi.values));
    let lhs: Vec<C64> = fg.iter().zip(&gf).map(|(a, b)| -I * (a - b)).collect();
    let bracket = special_bracket(f, g, bundle)?;
    let mut rhs = quantum_operator(&bracket, bundle, k_factor, t)?.apply_values(&psi.values);

    let f0 = node_values(&grid, t, &f.f0)[0];
    let g0 = node_values(&grid, t, &g.f0)[0];
    let included = f0 != 0.0 || g0 != 0.0;
    let mut obstruction_norm = 0.0;
    if included {
        let yf = quantum_vector_field(f, bundle)?;
        let yg = quantum_vector_field(g, bundle)?;
        // O = g⁰ Y[f]• - f⁰ Y[g]•; the ∂₀ parts cancel for this combination.
        let apply_o = |state: &WaveFunction| -> Result<Vec<C64>, QuantumError> {
            let at = state.t;
            let f0 = node_values(&grid, at, &f.f0)[0];
            let g0 = node_values(&grid, at, &g.f0)[0];
            let spatial = |y: &QuantumVectorField| QuantumVectorField {
                y0: Expr::zero(),
                ..y.clone()
            };
            let a = apply_vector_field(&spatial(&yf), state, None, bundle)?;
            let b = apply_vector_field(&spatial(&yg), state, None, bundle)?;
            Ok(a.iter().zip(&b).map(|(a, b)| g0 * a - f0 * b).collect())
        };
        let source = TimeSource::Analytic { family, dt };
        let s_psi = schrodinger_apply(&psi, &source, bundle, k_factor)?;
        let o_s = apply_o(&psi.with_values(s_psi))?;
        let o_family = |s: f64| -> Vec<C64> {
            let state = WaveFunction {
                t: s,
                grid: grid.clone(),
                values: family(s),
            };
            apply_o(&state).expect("state shape was checked")
        };
        let o_psi = psi.with_values(o_family(t));
        let o_source = TimeSource::Analytic {
            family: &o_family,
            dt,
        };
        let s_o = schrodinger_apply(&o_psi, &o_source, bundle, k_factor)?;
        for i in 0..grid.len() {
            let term = -I * (o_s[i] - s_o[i]);
            obstruction_norm = f64::max(obstruction_norm, term.norm());
            rhs[i] += term;
        }
    }
    let margin = 2 * grid.order();
    let residual = (0..grid.len())
        .filter(|&i| grid.wall_distance(i) >= margin)
        .map(|i| (lhs[i] - rhs[i]).norm())
        .fold(0.0, f64::max);
    Ok(CommutatorReport {
        lhs,
        rhs,
        obstruction_norm,
        obstruction_included: included,
        residual,
        margin,
    })
}

/// Probability current `j⁰ = |ψ|² √|g|`, `j^i = √|g| G^{ij} Im(ψ̄ ∇̊_j ψ)`.
pub fn probability_current(
    psi: &WaveFunction,
    bundle: &GeometryBundle,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), QuantumError> {
    let grid = bundle_grid(bundle)?;
    check_grid(psi, &grid)?;
    let n = grid.n();
    let w = node_values(&grid, psi.t, bundle.metric.sqrt_det());
    let j0 = psi.values.iter().zip(&w).map(|(v, w)| v.norm_sqr() * w).collect();
    let grads: Vec<Vec<C64>> = (0..n)
        .map(|j| covariant_derivative(psi, bundle, j + 1, None))
        .collect::<Result<_, _>>()?;
    let ginv: Vec<Vec<f64>> = (0..n * n)
        .map(|k| node_values(&grid, psi.t, bundle.metric.inv(k / n, k % n)))
        .collect();
    let ji = (0..n)
        .map(|i| {
            (0..grid.len())
                .map(|p| {
                    let s: f64 = (0..n)
                        .map(|j| ginv[i * n + j][p] * (psi.values[p].conj() * grads[j][p]).im)
                        .sum();
                    w[p] * s
                })
                .collect()
        })
        .collect();
    Ok((j0, ji))
}

/// Max-norm of `∂₀ j⁰ + ∂_i j^i` at `cur`, with the time derivative taken
/// from the neighbouring slices.
pub fn continuity_residual(
    prev: &WaveFunction,
    cur: &WaveFunction,
    next: &WaveFunction,
    bundle: &GeometryBundle,
) -> Result<f64, QuantumError> {
    let grid = bundle_grid(bundle)?;
    let (j_prev, _) = probability_current(prev, bundle)?;
    let (j_next, _) = probability_current(next, bundle)?;
    let (_, ji) = probability_current(cur, bundle)?;
    let span = next.t - prev.t;
    let mut res: Vec<f64> = j_prev.iter().zip(&j_next).map(|(a, b)| (b - a) / span).collect();
    for (axis, j) in ji.iter().enumerate() {
        let d = central_matrix(&grid, axis, None, cur.t);
        let jc: Vec<C64> = j.iter().map(|&v| C64::new(v, 0.0)).collect();
        for (r, v) in res.iter_mut().zip(d.matvec(&jc)) {
            *r += v.re;
        }
    }
    let margin = grid.order();
    Ok((0..grid.len())
        .filter(|&i| grid.wall_distance(i) >= margin)
        .map(|i| res[i].abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FibredChart, SpacelikeMetric};

    fn flat1(points: usize, half: f64, order: usize) -> GeometryBundle {
        let chart = FibredChart::new(vec![(-half, half)], vec![points], 0.01)
            .unwrap()
            .with_order(order)
            .unwrap();
        GeometryBundle::flat(chart)
    }

    fn with_potential(b: GeometryBundle, a: Vec<Expr>) -> GeometryBundle {
        GeometryBundle::from_potential(b.chart, b.metric, a).unwrap()
    }

    fn gaussian(grid: &Grid, centre: f64, k: f64) -> WaveFunction {
        WaveFunction::from_fn(grid, 0.0, |x| {
            let d = x[0] - centre;
            C64::new(0.0, k * x[0]).exp() * (-0.5 * d * d).exp()
        })
    }

    #[test]
    fn covariant_derivative_examples() {
        let b = flat1(200, 3.0, 2);
        let grid = b.grid().unwrap();
        let k = 1.5;
        let wave = WaveFunction::from_fn(&grid, 0.0, |x| C64::new(0.0, k * x[0]).exp());
        let d = covariant_derivative(&wave, &b, 1, None).unwrap();
        let h = grid.spacing(0);
        for i in 1..grid.len() - 1 {
            assert!((d[i] - I * k * wave.values[i]).norm() < k.powi(3) * h * h);
        }
        let a = 0.7;
        let gauged = with_potential(b, vec![Expr::zero(), Expr::constant(a)]);
        let wave = WaveFunction::from_fn(&grid, 0.0, |x| C64::new(0.0, a * x[0]).exp());
        let d = covariant_derivative(&wave, &gauged, 1, None).unwrap();
        for v in &d[1..grid.len() - 1] {
            assert!(v.norm() < 1e-12);
        }
        assert_eq!(
            covariant_derivative(&wave, &gauged, 0, None).unwrap_err(),
            QuantumError::MissingTimeStencil
        );
    }

    #[test]
    fn flat_laplacian_of_plane_wave() {
        let b = flat1(400, 3.0, 2);
        let grid = b.grid().unwrap();
        let k = 2.0;
        let wave = WaveFunction::from_fn(&grid, 0.0, |x| C64::new(0.0, k * x[0]).exp());
        let lap = curved_laplacian(&wave, &b).unwrap();
        let h = grid.spacing(0);
        for i in 1..grid.len() - 1 {
            assert!((lap[i] + k * k * wave.values[i]).norm() < k.powi(4) * h * h);
        }
    }

    #[test]
    fn sphere_harmonic_eigenrelation() {
        let a = 1.0;
        let chart = FibredChart::new(vec![(-1.0, 1.0), (-1.0, 1.0)], vec![128, 128], 0.01).unwrap();
        let b = GeometryBundle::from_potential(
            chart,
            SpacelikeMetric::stereographic_sphere(a),
            vec![Expr::zero(); 3],
        )
        .unwrap();
        let grid = b.grid().unwrap();
        let psi = WaveFunction::from_fn(&grid, 0.0, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            C64::new((r2 - a * a) / (r2 + a * a), 0.0)
        });
        let lap = curved_laplacian(&psi, &b).unwrap();
        let worst = (0..grid.len())
            .filter(|&i| grid.wall_distance(i) >= 1)
            .map(|i| (lap[i] + 2.0 / (a * a) * psi.values[i]).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn higher_orders_converge_faster() {
        let k = 1.0;
        let err = |order: usize, points: usize| {
            let b = flat1(points, 8.0, order);
            let grid = b.grid().unwrap();
            let psi = gaussian(&grid, 0.0, k);
            let lap = curved_laplacian(&psi, &b).unwrap();
            let exact = WaveFunction::from_fn(&grid, 0.0, |x| {
                let z = C64::new(-x[0], k);
                (z * z - 1.0) * C64::new(0.0, k * x[0]).exp() * (-0.5 * x[0] * x[0]).exp()
            });
            (0..grid.len())
                .map(|i| (lap[i] - exact.values[i]).norm())
                .fold(0.0, f64::max)
        };
        for order in [2, 4, 6, 8] {
            let rate = (err(order, 100) / err(order, 200)).log2();
            assert!(rate > order as f64 - 0.5, "order {order}: rate {rate}");
        }
    }

    #[test]
    fn flat_operators_are_standard() {
        let b = with_potential(flat1(64, 6.0, 2), vec![-0.5 * Expr::x(0).square(), Expr::zero()]);
        let grid = b.grid().unwrap();
        let psi = gaussian(&grid, 0.4, 0.8);
        let h = grid.spacing(0);
        let v = &psi.values;
        let at = |i: isize| if i < 0 || i >= v.len() as isize { C64::new(0.0, 0.0) } else { v[i as usize] };
        let x = SpecialQuadratic::coordinate(1, 0);
        let p = SpecialQuadratic::momentum(&b, 0);
        let ham = SpecialQuadratic::hamiltonian(&b);
        let xs = quantum_operator(&x, &b, 0.0, 0.0).unwrap().apply_values(v);
        let ps = quantum_operator(&p, &b, 0.0, 0.0).unwrap().apply_values(v);
        let hs = quantum_operator(&ham, &b, 0.0, 0.0).unwrap().apply_values(v);
        for i in 0..v.len() {
            let xi = grid.coords(i)[0];
            let ii = i as isize;
            let dpsi = (at(ii + 1) - at(ii - 1)) / (2.0 * h);
            let d2psi = (at(ii + 1) - 2.0 * at(ii) + at(ii - 1)) / (h * h);
            assert!((xs[i] - xi * v[i]).norm() < 1e-12);
            assert!((ps[i] + I * dpsi).norm() < 1e-10);
            assert!((hs[i] - (-0.5 * d2psi + 0.5 * xi * xi * v[i])).norm() < 1e-10);
        }
    }

    #[test]
    fn vector_field_examples() {
        let b = flat1(32, 4.0, 2);
        let x = quantum_vector_field(&SpecialQuadratic::coordinate(1, 0), &b).unwrap();
        assert!(x.y0.is_zero() && x.yj[0].is_zero() && x.yz_re.is_zero());
        let p = quantum_vector_field(&SpecialQuadratic::momentum(&b, 0), &b).unwrap();
        assert_eq!(p.yj[0].as_const(), Some(-1.0));
        assert_eq!(p.yz_re.eval(&[0.0; 7]), 0.0);
        let bad = SpecialQuadratic::new(Expr::x(0), vec![Expr::zero()], Expr::zero());
        assert!(quantum_vector_field(&bad, &b).is_err());
    }

    #[test]
    fn lie_action_examples() {
        let b = flat1(400, 10.0, 4);
        let grid = b.grid().unwrap();
        let k = 1.2;
        let psi = gaussian(&grid, 0.0, k);
        let z = lie_action(&SpecialQuadratic::coordinate(1, 0), &psi, None, &b).unwrap();
        for i in 0..grid.len() {
            assert!((z.values[i] - grid.coords(i)[0] * psi.values[i]).norm() < 1e-14);
        }
        let plane = WaveFunction::from_fn(&grid, 0.0, |x| C64::new(0.0, k * x[0]).exp());
        let z = lie_action(&SpecialQuadratic::momentum(&b, 0), &plane, None, &b).unwrap();
        for i in 4..grid.len() - 4 {
            assert!((z.values[i] - k * plane.values[i]).norm() < 1e-5);
        }
        // stationary state φ e^{-iEt}
        let e = 0.5;
        let phi = gaussian(&grid, 0.0, 0.0);
        let family = |t: f64| -> Vec<C64> {
            phi.values.iter().map(|v| v * C64::new(0.0, -e * t).exp()).collect()
        };
        let src = TimeSource::Analytic { family: &family, dt: 1e-3 };
        let z = lie_action(&SpecialQuadratic::hamiltonian(&b), &phi, Some(&src), &b).unwrap();
        for i in 0..grid.len() {
            assert!((z.values[i] - e * phi.values[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn schrodinger_on_plane_wave() {
        let k = 1.3;
        let residual = |points: usize| {
            let b = flat1(points, 3.0, 2);
            let grid = b.grid().unwrap();
            let family = |t: f64| -> Vec<C64> {
                (0..grid.len())
                    .map(|i| C64::new(0.0, k * grid.coords(i)[0] - 0.5 * k * k * t).exp())
                    .collect()
            };
            let psi = WaveFunction { t: 0.2, grid: grid.clone(), values: family(0.2) };
            let src = TimeSource::Analytic { family: &family, dt: 1e-3 };
            let s = schrodinger_apply(&psi, &src, &b, 0.0).unwrap();
            s[1..s.len() - 1].iter().map(|v| v.norm()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (residual(100), residual(200));
        assert!(fine < 1e-2 && coarse / fine > 3.5);
    }

    #[test]
    fn curvature_factor_enters_linearly() {
        let chart = FibredChart::new(vec![(-0.8, 0.8), (-0.8, 0.8)], vec![24, 24], 0.01).unwrap();
        let b = GeometryBundle::from_potential(
            chart,
            SpacelikeMetric::stereographic_sphere(1.0),
            vec![Expr::zero(); 3],
        )
        .unwrap();
        let grid = b.grid().unwrap();
        let psi = WaveFunction::from_fn(&grid, 0.0, |x| C64::new((-4.0 * (x[0] * x[0] + x[1] * x[1])).exp(), 0.1 * x[0]));
        let family = |_t: f64| psi.values.clone();
        let src = TimeSource::Analytic { family: &family, dt: 1e-3 };
        let s0 = schrodinger_apply(&psi, &src, &b, 0.0).unwrap();
        let s1 = schrodinger_apply(&psi, &src, &b, 1.0).unwrap();
        let r = scalar_curvature(&b.metric, &grid, 0.0).unwrap().values;
        for i in 0..grid.len() {
            let expect = 0.5 * I * r[i] * psi.values[i];
            assert!((s1[i] - s0[i] - expect).norm() < 1e-13);
        }
    }

    #[test]
    fn canonical_commutator_and_support_check() {
        let b = flat1(801, 10.0, 8);
        let grid = b.grid().unwrap();
        let psi = gaussian(&grid, 0.5, 0.7);
        let family = |_t: f64| psi.values.clone();
        let x = SpecialQuadratic::coordinate(1, 0);
        let p = SpecialQuadratic::momentum(&b, 0);
        let rep = commutator_check(&x, &p, &family, 0.0, &b, 0.0, 1e-3).unwrap();
        assert!(!rep.obstruction_included);
        assert!(rep.residual < 1e-8, "{}", rep.residual);
        let wide = gaussian(&grid, 9.0, 0.0);
        let family = |_t: f64| wide.values.clone();
        assert!(matches!(
            commutator_check(&x, &p, &family, 0.0, &b, 0.0, 1e-3),
            Err(QuantumError::TestState { .. })
        ));
    }

    #[test]
    fn current_of_plane_wave() {
        let b = flat1(100, 3.0, 4);
        let grid = b.grid().unwrap();
        let k = 0.9;
        let psi = WaveFunction::from_fn(&grid, 0.0, |x| C64::new(0.0, k * x[0]).exp());
        let (j0, ji) = probability_current(&psi, &b).unwrap();
        for i in 4..grid.len() - 4 {
            assert!((j0[i] - 1.0).abs() < 1e-14);
            assert!((ji[0][i] - k).abs() < 1e-5);
        }
        let real = gaussian(&grid, 0.0, 0.0);
        let (_, ji) = probability_current(&real, &b).unwrap();
        assert!(ji[0].iter().all(|v| v.abs() < 1e-15));
    }
}
