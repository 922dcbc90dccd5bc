//! Spacetime geometry in a fibred chart `(x^0, x^i)`.
//!
//! Index conventions used throughout the crate:
//!
//! * spacetime indices `λ, μ` run over `0..=n` with `0` the time direction;
//! * spatial indices `h, i, j` are zero-based, so spatial `i` is spacetime
//!   index `i + 1`;
//! * connection coefficients `K_λ^h_μ` are stored so that the geodesic
//!   acceleration reads `ẍ^h = K_0^h_0 + 2 K_0^h_j ẋ^j + K_i^h_j ẋ^i ẋ^j`.
//!   With this sign the purely spatial part of a metric connection is minus
//!   the Christoffel symbols of `G`.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::expr::{point_vars, Expr, Tape, Var, NVARS};
use crate::grid::{fd_derivative, Grid, GridError, GridField};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("grid too coarse on axis {axis}: {points} points, need at least 4")]
    Resolution { axis: usize, points: usize },
    #[error("metric is degenerate at t = {t}, x = {x:?}")]
    Degenerate { t: f64, x: Vec<f64> },
}

/// A single chart box of spacetime and its sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct FibredChart {
    pub n: usize,
    pub extent: Vec<(f64, f64)>,
    pub points: Vec<usize>,
    pub time_step: f64,
    /// Order of the finite-difference stencils used by grid operators.
    pub fd_order: usize,
}

impl FibredChart {
    pub fn new(
        extent: Vec<(f64, f64)>,
        points: Vec<usize>,
        time_step: f64,
    ) -> Result<FibredChart, GeometryError> {
        let chart = FibredChart {
            n: extent.len(),
            extent,
            points,
            time_step,
            fd_order: 2,
        };
        chart.grid()?;
        if !(time_step > 0.0) {
            return Err(GridError::TimeStep(time_step).into());
        }
        Ok(chart)
    }

    pub fn with_order(mut self, order: usize) -> Result<FibredChart, GeometryError> {
        self.fd_order = order;
        self.grid()?;
        Ok(self)
    }

    pub fn grid(&self) -> Result<Grid, GridError> {
        Grid::new(&self.extent, &self.points, self.fd_order)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.extent)
            .all(|(xi, (lo, hi))| *xi >= *lo && *xi <= *hi)
    }
}

fn shape(msg: impl Into<String>) -> GeometryError {
    GeometryError::Shape(msg.into())
}

fn det_expr(m: &[Expr], n: usize) -> Expr {
    let a = |i: usize, j: usize| &m[i * n + j];
    match n {
        1 => a(0, 0).clone(),
        2 => a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0),
        3 => {
            a(0, 0) * &(a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
                - a(0, 1) * &(a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
                + a(0, 2) * &(a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
        }
        _ => unreachable!("chart dimension is 1..=3"),
    }
}

fn inverse_expr(m: &[Expr], n: usize, det: &Expr) -> Vec<Expr> {
    let a = |i: usize, j: usize| &m[i * n + j];
    let adj: Vec<Expr> = match n {
        1 => vec![Expr::one()],
        2 => vec![a(1, 1).clone(), -a(0, 1), -a(1, 0), a(0, 0).clone()],
        3 => {
            let mut out = Vec::with_capacity(9);
            for i in 0..3 {
                for j in 0..3 {
                    // adj(i, j) = cofactor(j, i)
                    let rows: Vec<usize> = (0..3).filter(|&r| r != j).collect();
                    let cols: Vec<usize> = (0..3).filter(|&c| c != i).collect();
                    let minor = a(rows[0], cols[0]) * a(rows[1], cols[1])
                        - a(rows[0], cols[1]) * a(rows[1], cols[0]);
                    out.push(if (i + j) % 2 == 0 { minor } else { -minor });
                }
            }
            out
        }
        _ => unreachable!("chart dimension is 1..=3"),
    };
    adj.into_iter().map(|e| e / det).collect()
}

/// The rescaled spacelike metric `G_ij(t, x)`.
#[derive(Clone, Debug)]
pub struct SpacelikeMetric {
    n: usize,
    comps: Vec<Expr>,
    inverse: Vec<Expr>,
    det: Expr,
    sqrt_det: Expr,
    christoffel: Vec<Expr>,
}

impl SpacelikeMetric {
    /// Build from the full row-major `n × n` component list.
    pub fn new(n: usize, comps: Vec<Expr>) -> Result<SpacelikeMetric, GeometryError> {
        if !(1..=3).contains(&n) || comps.len() != n * n {
            return Err(shape(format!(
                "metric needs {n}x{n} components, got {}",
                comps.len()
            )));
        }
        let det = det_expr(&comps, n);
        let inverse = inverse_expr(&comps, n, &det);
        let sqrt_det = det.sqrt();
        let mut christoffel = Vec::with_capacity(n * n * n);
        let dg: Vec<Vec<Expr>> = (0..n)
            .map(|k| comps.iter().map(|g| g.diff(Var::x(k))).collect())
            .collect();
        for h in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut sum = Expr::zero();
                    for k in 0..n {
                        let lowered = &dg[i][k * n + j] + &dg[j][k * n + i] - &dg[k][i * n + j];
                        sum = sum + &inverse[h * n + k] * lowered;
                    }
                    christoffel.push(0.5 * sum);
                }
            }
        }
        Ok(SpacelikeMetric {
            n,
            comps,
            inverse,
            det,
            sqrt_det,
            christoffel,
        })
    }

    pub fn flat(n: usize) -> SpacelikeMetric {
        SpacelikeMetric::conformal(n, Expr::one())
    }

    /// `G_ij = factor · δ_ij`.
    pub fn conformal(n: usize, factor: Expr) -> SpacelikeMetric {
        let comps = (0..n * n)
            .map(|k| if k / n == k % n { factor.clone() } else { Expr::zero() })
            .collect();
        SpacelikeMetric::new(n, comps).expect("conformal metric has a valid shape")
    }

    /// Round-sphere metric of radius `a` in the stereographic chart.
    pub fn stereographic_sphere(a: f64) -> SpacelikeMetric {
        let r2 = Expr::x(0).square() + Expr::x(1).square();
        let factor = (4.0 * a.powi(4)) / (a * a + r2).square();
        SpacelikeMetric::conformal(2, factor)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn g(&self, i: usize, j: usize) -> &Expr {
        &self.comps[i * self.n + j]
    }

    pub fn components(&self) -> &[Expr] {
        &self.comps
    }

    /// Inverse metric `G^{ij}`.
    pub fn inv(&self, i: usize, j: usize) -> &Expr {
        &self.inverse[i * self.n + j]
    }

    pub fn det(&self) -> &Expr {
        &self.det
    }

    /// `√|g|` built from the rescaled metric.
    pub fn sqrt_det(&self) -> &Expr {
        &self.sqrt_det
    }

    /// Fibre Christoffel symbols `Γ^h_ij`.
    pub fn christoffel(&self, h: usize, i: usize, j: usize) -> &Expr {
        &self.christoffel[(h * self.n + i) * self.n + j]
    }

    pub fn is_time_dependent(&self) -> bool {
        self.comps.iter().any(|g| g.depends_on(Var::T))
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let p = point_vars(t, x, &[]);
        DMatrix::from_fn(self.n, self.n, |i, j| self.g(i, j).eval(&p))
    }

    pub fn eval_inverse(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        self.eval(t, x)
            .try_inverse()
            .ok_or_else(|| GeometryError::Degenerate { t, x: x.to_vec() })
    }
}

/// Coefficients `K_λ^h_μ` of a time preserving linear connection.
#[derive(Clone, Debug)]
pub struct SpacetimeConnection {
    n: usize,
    coeffs: Vec<Expr>,
}

impl SpacetimeConnection {
    pub fn zero(n: usize) -> SpacetimeConnection {
        SpacetimeConnection {
            n,
            coeffs: vec![Expr::zero(); (n + 1) * n * (n + 1)],
        }
    }

    fn idx(&self, lam: usize, h: usize, mu: usize) -> usize {
        debug_assert!(lam <= self.n && mu <= self.n && h < self.n);
        (lam * self.n + h) * (self.n + 1) + mu
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, lam: usize, h: usize, mu: usize) -> &Expr {
        &self.coeffs[self.idx(lam, h, mu)]
    }

    pub fn set(&mut self, lam: usize, h: usize, mu: usize, value: Expr) {
        let k = self.idx(lam, h, mu);
        self.coeffs[k] = value;
    }

    pub fn coefficients(&self) -> &[Expr] {
        &self.coeffs
    }

    /// The metric connection of `G`: spatial part from the Christoffel
    /// symbols, `K_0^h_j = -½ G^{hk} ∂_0 G_kj`, `K_0^h_0 = 0`.
    pub fn levi_civita(metric: &SpacelikeMetric) -> SpacetimeConnection {
        let n = metric.n();
        let mut k = SpacetimeConnection::zero(n);
        for h in 0..n {
            for i in 0..n {
                for j in 0..n {
                    k.set(i + 1, h, j + 1, -metric.christoffel(h, i, j));
                }
                let mut time = Expr::zero();
                for m in 0..n {
                    time = time + metric.inv(h, m) * metric.g(m, i).diff(Var::T);
                }
                let time = -0.5 * time;
                k.set(0, h, i + 1, time.clone());
                k.set(i + 1, h, 0, time);
            }
        }
        k
    }
}

/// Rescaled electromagnetic 2-form `F_λμ`.
#[derive(Clone, Debug)]
pub struct EMField {
    n: usize,
    comps: Vec<Expr>,
}

impl EMField {
    pub fn zero(n: usize) -> EMField {
        EMField {
            n,
            comps: vec![Expr::zero(); (n + 1) * (n + 1)],
        }
    }

    pub fn from_components(n: usize, comps: Vec<Expr>) -> Result<EMField, GeometryError> {
        if comps.len() != (n + 1) * (n + 1) {
            return Err(shape(format!(
                "em field needs {0}x{0} components, got {1}",
                n + 1,
                comps.len()
            )));
        }
        Ok(EMField { n, comps })
    }

    /// `F = dA`, i.e. `F_λμ = ∂_λ A_μ - ∂_μ A_λ`.
    pub fn from_potential(potential: &[Expr]) -> EMField {
        let n = potential.len() - 1;
        let var = |l: usize| if l == 0 { Var::T } else { Var::x(l - 1) };
        let mut f = EMField::zero(n);
        for l in 0..=n {
            for m in 0..=n {
                if l != m {
                    f.comps[l * (n + 1) + m] =
                        potential[m].diff(var(l)) - potential[l].diff(var(m));
                }
            }
        }
        f
    }

    /// Set `F_λμ = value` and `F_μλ = -value`.
    pub fn with_component(mut self, lam: usize, mu: usize, value: Expr) -> EMField {
        let n1 = self.n + 1;
        self.comps[mu * n1 + lam] = -&value;
        self.comps[lam * n1 + mu] = value;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, lam: usize, mu: usize) -> &Expr {
        &self.comps[lam * (self.n + 1) + mu]
    }

    pub fn components(&self) -> &[Expr] {
        &self.comps
    }
}

/// Add the electromagnetic field to the gravitational connection:
/// `K_i^h_j = K♮_i^h_j`, `K_j^h_0 = K_0^h_j = K♮_0^h_j + ½ F^h_j`,
/// `K_0^h_0 = K♮_0^h_0 + F^h_0`, with `F^h_μ = G^{hk} F_kμ`.
pub fn compose_total_connection(
    grav: &SpacetimeConnection,
    em: &EMField,
    metric: &SpacelikeMetric,
) -> Result<SpacetimeConnection, GeometryError> {
    let n = grav.n();
    if em.n() != n || metric.n() != n {
        return Err(shape(format!(
            "connection has n = {n}, em field n = {}, metric n = {}",
            em.n(),
            metric.n()
        )));
    }
    let raised = |h: usize, mu: usize| -> Expr {
        (0..n)
            .map(|k| metric.inv(h, k) * em.get(k + 1, mu))
            .sum()
    };
    let mut total = grav.clone();
    for h in 0..n {
        let f_h0 = raised(h, 0);
        total.set(0, h, 0, grav.get(0, h, 0) + f_h0);
        for j in 0..n {
            let half = 0.5 * raised(h, j + 1);
            total.set(0, h, j + 1, grav.get(0, h, j + 1) + &half);
            total.set(j + 1, h, 0, grav.get(j + 1, h, 0) + &half);
        }
    }
    Ok(total)
}

/// Everything the classical and quantum layers need about spacetime.
#[derive(Clone, Debug)]
pub struct GeometryBundle {
    pub chart: FibredChart,
    pub metric: SpacelikeMetric,
    pub grav: SpacetimeConnection,
    pub em: EMField,
    pub total: SpacetimeConnection,
    /// `A_λ`, the Poincaré–Cartan gauge pulled back by the chart observer.
    pub potential: Vec<Expr>,
}

impl GeometryBundle {
    pub fn new(
        chart: FibredChart,
        metric: SpacelikeMetric,
        grav: SpacetimeConnection,
        em: EMField,
        potential: Vec<Expr>,
    ) -> Result<GeometryBundle, GeometryError> {
        let n = chart.n;
        if metric.n() != n || potential.len() != n + 1 {
            return Err(shape(format!(
                "chart n = {n}, metric n = {}, potential has {} components",
                metric.n(),
                potential.len()
            )));
        }
        let total = compose_total_connection(&grav, &em, &metric)?;
        Ok(GeometryBundle {
            chart,
            metric,
            grav,
            em,
            total,
            potential,
        })
    }

    /// Metric connection of `G` plus `F = dA`.
    pub fn from_potential(
        chart: FibredChart,
        metric: SpacelikeMetric,
        potential: Vec<Expr>,
    ) -> Result<GeometryBundle, GeometryError> {
        let grav = SpacetimeConnection::levi_civita(&metric);
        if potential.len() != chart.n + 1 {
            return Err(shape("potential needs n + 1 components"));
        }
        let em = EMField::from_potential(&potential);
        GeometryBundle::new(chart, metric, grav, em, potential)
    }

    pub fn flat(chart: FibredChart) -> GeometryBundle {
        let n = chart.n;
        GeometryBundle::from_potential(chart, SpacelikeMetric::flat(n), vec![Expr::zero(); n + 1])
            .expect("flat bundle is well formed")
    }

    /// Replace the total connection, bypassing composition.
    pub fn with_total(mut self, total: SpacetimeConnection) -> GeometryBundle {
        self.total = total;
        self
    }

    pub fn n(&self) -> usize {
        self.chart.n
    }

    pub fn grid(&self) -> Result<Grid, GridError> {
        self.chart.grid()
    }

    pub fn is_time_dependent(&self) -> bool {
        self.metric.is_time_dependent() || self.potential.iter().any(|a| a.depends_on(Var::T))
    }
}

/// Fibrewise scalar curvature of `G(t, ·)` on the chart grid. Christoffel
/// symbols are sampled at the nodes and differentiated with second-order
/// finite differences.
pub fn scalar_curvature(
    metric: &SpacelikeMetric,
    grid: &Grid,
    t: f64,
) -> Result<GridField, GeometryError> {
    for (axis, &pts) in grid.dims().iter().enumerate() {
        if pts < 4 {
            return Err(GeometryError::Resolution { axis, points: pts });
        }
    }
    let n = metric.n();
    if n != grid.n() {
        return Err(shape("metric and grid dimensions differ"));
    }
    if n == 1 {
        return Ok(GridField::zeros(grid));
    }
    let len = grid.len();
    let sample = |e: &Expr| -> Vec<f64> {
        let tape = e.compile();
        let mut regs = Vec::new();
        (0..len)
            .map(|idx| tape.eval_with(&point_vars(t, &grid.coords(idx)[..n], &[]), &mut regs))
            .collect()
    };
    let gamma: Vec<Vec<f64>> = (0..n * n * n)
        .map(|k| sample(metric.christoffel(k / (n * n), (k / n) % n, k % n)))
        .collect();
    let ginv: Vec<Vec<f64>> = (0..n * n).map(|k| sample(metric.inv(k / n, k % n))).collect();
    let gi = |h: usize, i: usize, j: usize| (h * n + i) * n + j;
    // dgamma[axis][component]
    let dgamma: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|axis| gamma.iter().map(|g| fd_derivative(grid, g, axis)).collect())
        .collect();
    let mut out = GridField::zeros(grid);
    for p in 0..len {
        let mut r = 0.0;
        for b in 0..n {
            for d in 0..n {
                let mut ric = 0.0;
                for a in 0..n {
                    ric += dgamma[a][gi(a, d, b)][p] - dgamma[d][gi(a, a, b)][p];
                    for e in 0..n {
                        ric += gamma[gi(a, a, e)][p] * gamma[gi(e, d, b)][p]
                            - gamma[gi(a, d, e)][p] * gamma[gi(e, a, b)][p];
                    }
                }
                r += ginv[b * n + d][p] * ric;
            }
        }
        out.values[p] = r;
    }
    Ok(out)
}

/// Where structural residuals are sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationSampling {
    /// Interior nodes used per axis (evenly spread, walls excluded).
    pub per_axis: usize,
    pub times: Vec<f64>,
}

impl Default for ValidationSampling {
    fn default() -> Self {
        ValidationSampling {
            per_axis: 5,
            times: vec![0.0, 0.37, 1.0],
        }
    }
}

impl ValidationSampling {
    /// Sample points `(t, x)` drawn from the chart grid.
    pub fn points(&self, chart: &FibredChart) -> Vec<(f64, Vec<f64>)> {
        let axes: Vec<Vec<f64>> = chart
            .extent
            .iter()
            .zip(&chart.points)
            .map(|(&(lo, hi), &pts)| {
                let h = (hi - lo) / (pts + 1) as f64;
                let m = self.per_axis.min(pts.saturating_sub(2)).max(1);
                (0..m)
                    .map(|k| {
                        let node = 1 + (k * (pts - 3)) / (m.max(2) - 1).max(1);
                        lo + (node.min(pts - 2) + 1) as f64 * h
                    })
                    .collect()
            })
            .collect();
        let mut spatial: Vec<Vec<f64>> = vec![vec![]];
        for axis in &axes {
            spatial = spatial
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&c| {
                        let mut p = prefix.clone();
                        p.push(c);
                        p
                    })
                })
                .collect();
        }
        self.times
            .iter()
            .flat_map(|&t| spatial.iter().map(move |x| (t, x.clone())))
            .collect()
    }
}

/// Max-norm structural residuals of a bundle.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualReport {
    pub metric_symmetry: f64,
    pub min_metric_eigenvalue: f64,
    pub metric_compatibility: f64,
    /// `R_λ^i_μ^j - R_μ^j_λ^i` with `j` raised by `G` from the second form slot.
    pub curvature_symmetry: f64,
    /// The same pairing with the index raised from the endomorphism slot.
    pub curvature_symmetry_alt: f64,
    pub em_antisymmetry: f64,
    pub em_closedness: f64,
    pub torsion: f64,
    /// Distance of the stored total connection from the recomposed one.
    pub total_composition: f64,
}

impl ResidualReport {
    /// Largest structural residual (excludes the alternative curvature
    /// pairing and the eigenvalue bound).
    pub fn max_residual(&self) -> f64 {
        [
            self.metric_symmetry,
            self.metric_compatibility,
            self.curvature_symmetry,
            self.em_antisymmetry,
            self.em_closedness,
            self.torsion,
            self.total_composition,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual() <= tol && self.min_metric_eigenvalue > 0.0
    }

    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("metric_symmetry", self.metric_symmetry),
            ("min_metric_eigenvalue", self.min_metric_eigenvalue),
            ("metric_compatibility", self.metric_compatibility),
            ("curvature_symmetry", self.curvature_symmetry),
            ("curvature_symmetry_alt", self.curvature_symmetry_alt),
            ("em_antisymmetry", self.em_antisymmetry),
            ("em_closedness", self.em_closedness),
            ("torsion", self.torsion),
            ("total_composition", self.total_composition),
        ]
    }
}

/// Compiled expressions together with their first partials in `t, x1..xn`.
pub(crate) struct FieldJet {
    n: usize,
    values: Vec<Tape>,
    /// `derivs[λ][k]`: derivative of field `k` along spacetime index `λ`.
    derivs: Vec<Vec<Tape>>,
}

pub fn spacetime_var(lam: usize) -> Var {
    if lam == 0 {
        Var::T
    } else {
        Var::x(lam - 1)
    }
}

impl FieldJet {
    pub(crate) fn new(n: usize, fields: &[Expr]) -> FieldJet {
        FieldJet {
            n,
            values: fields.iter().map(Expr::compile).collect(),
            derivs: (0..=n)
                .map(|lam| {
                    fields
                        .iter()
                        .map(|f| f.diff(spacetime_var(lam)).compile())
                        .collect()
                })
                .collect(),
        }
    }

    pub(crate) fn eval(&self, p: &[f64; NVARS]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut regs = Vec::new();
        let vals = self.values.iter().map(|t| t.eval_with(p, &mut regs)).collect();
        let ders = (0..=self.n)
            .map(|lam| {
                self.derivs[lam]
                    .iter()
                    .map(|t| t.eval_with(p, &mut regs))
                    .collect()
            })
            .collect();
        (vals, ders)
    }
}

struct ConnectionResiduals {
    compat: f64,
    torsion: f64,
    sym: f64,
    sym_alt: f64,
}

fn connection_residuals(
    n: usize,
    k: &[f64],
    dk: &[Vec<f64>],
    g: &[f64],
    dg: &[Vec<f64>],
    ginv: &[f64],
) -> ConnectionResiduals {
    let n1 = n + 1;
    let ki = |lam: usize, h: usize, mu: usize| (lam * n + h) * n1 + mu;
    // Γ^ρ_{λσ} = -K_λ^ρ_σ
    let gam = |lam: usize, h: usize, mu: usize| -k[ki(lam, h, mu)];
    let dgam = |a: usize, lam: usize, h: usize, mu: usize| -dk[a][ki(lam, h, mu)];
    let mut out = ConnectionResiduals {
        compat: 0.0,
        torsion: 0.0,
        sym: 0.0,
        sym_alt: 0.0,
    };
    for lam in 0..n1 {
        for i in 0..n {
            for j in 0..n {
                let mut c = dg[lam][i * n + j];
                for h in 0..n {
                    c += k[ki(lam, h, i + 1)] * g[h * n + j] + k[ki(lam, h, j + 1)] * g[i * n + h];
                }
                out.compat = out.compat.max(c.abs());
            }
        }
        for h in 0..n {
            for mu in 0..n1 {
                out.torsion = out.torsion.max((k[ki(lam, h, mu)] - k[ki(mu, h, lam)]).abs());
            }
        }
    }
    // R(α, β; ρ; σ) with α, β the form slots.
    let riemann = |a: usize, b: usize, rho: usize, s: usize| -> f64 {
        let mut r = dgam(a, b, rho, s) - dgam(b, a, rho, s);
        for e in 0..n {
            r += gam(a, rho, e + 1) * gam(b, e, s) - gam(b, rho, e + 1) * gam(a, e, s);
        }
        r
    };
    let mut s = vec![0.0; n1 * n * n1 * n];
    let mut s_alt = vec![0.0; n1 * n * n1 * n];
    let si = |lam: usize, i: usize, mu: usize, j: usize| ((lam * n + i) * n1 + mu) * n + j;
    for lam in 0..n1 {
        for i in 0..n {
            for mu in 0..n1 {
                for j in 0..n {
                    let mut v = 0.0;
                    let mut v_alt = 0.0;
                    for h in 0..n {
                        v += ginv[j * n + h] * riemann(lam, h + 1, i, mu);
                        v_alt += riemann(lam, mu, i, h + 1) * ginv[h * n + j];
                    }
                    s[si(lam, i, mu, j)] = v;
                    s_alt[si(lam, i, mu, j)] = v_alt;
                }
            }
        }
    }
    for lam in 0..n1 {
        for i in 0..n {
            for mu in 0..n1 {
                for j in 0..n {
                    out.sym = out.sym.max((s[si(lam, i, mu, j)] - s[si(mu, j, lam, i)]).abs());
                    out.sym_alt = out
                        .sym_alt
                        .max((s_alt[si(lam, i, mu, j)] - s_alt[si(mu, j, lam, i)]).abs());
                }
            }
        }
    }
    out
}

pub fn validate_geometry(bundle: &GeometryBundle) -> ResidualReport {
    validate_geometry_with(bundle, &ValidationSampling::default())
}

/// Evaluate every structural residual at the sampling points, using exact
/// symbolic derivatives of the analytic fields.
pub fn validate_geometry_with(
    bundle: &GeometryBundle,
    sampling: &ValidationSampling,
) -> ResidualReport {
    let n = bundle.n();
    let n1 = n + 1;
    let metric = FieldJet::new(n, bundle.metric.components());
    let ginv_tapes: Vec<Tape> = (0..n * n)
        .map(|k| bundle.metric.inv(k / n, k % n).compile())
        .collect();
    let grav = FieldJet::new(n, bundle.grav.coefficients());
    let total = FieldJet::new(n, bundle.total.coefficients());
    let em = FieldJet::new(n, bundle.em.components());
    let recomposed: Vec<Tape> = match compose_total_connection(&bundle.grav, &bundle.em, &bundle.metric)
    {
        Ok(c) => c.coefficients().iter().map(Expr::compile).collect(),
        Err(_) => Vec::new(),
    };
    let mut rep = ResidualReport {
        min_metric_eigenvalue: f64::INFINITY,
        ..Default::default()
    };
    if recomposed.is_empty() {
        rep.total_composition = f64::INFINITY;
    }
    let mut regs = Vec::new();
    for (t, x) in sampling.points(&bundle.chart) {
        let p = point_vars(t, &x, &[]);
        let (g, dg) = metric.eval(&p);
        let ginv: Vec<f64> = ginv_tapes.iter().map(|tp| tp.eval_with(&p, &mut regs)).collect();
        let gm = DMatrix::from_row_slice(n, n, &g);
        for i in 0..n {
            for j in 0..n {
                rep.metric_symmetry = rep.metric_symmetry.max((g[i * n + j] - g[j * n + i]).abs());
            }
        }
        let sym = (&gm + gm.transpose()) * 0.5;
        let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
        rep.min_metric_eigenvalue = rep.min_metric_eigenvalue.min(min_eig);

        for jet in [&grav, &total] {
            let (k, dk) = jet.eval(&p);
            let r = connection_residuals(n, &k, &dk, &g, &dg, &ginv);
            rep.metric_compatibility = rep.metric_compatibility.max(r.compat);
            rep.torsion = rep.torsion.max(r.torsion);
            rep.curvature_symmetry = rep.curvature_symmetry.max(r.sym);
            rep.curvature_symmetry_alt = rep.curvature_symmetry_alt.max(r.sym_alt);
        }

        let (f, df) = em.eval(&p);
        for a in 0..n1 {
            for b in 0..n1 {
                rep.em_antisymmetry = rep.em_antisymmetry.max((f[a * n1 + b] + f[b * n1 + a]).abs());
                for c in 0..n1 {
                    let closed = df[a][b * n1 + c] + df[b][c * n1 + a] + df[c][a * n1 + b];
                    rep.em_closedness = rep.em_closedness.max(closed.abs());
                }
            }
        }

        if !recomposed.is_empty() {
            let (k, _) = total.eval(&p);
            for (kv, tape) in k.iter().zip(&recomposed) {
                rep.total_composition = rep
                    .total_composition
                    .max((kv - tape.eval_with(&p, &mut regs)).abs());
            }
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart1() -> FibredChart {
        FibredChart::new(vec![(-2.0, 2.0)], vec![16], 0.01).unwrap()
    }

    fn chart2(points: usize) -> FibredChart {
        FibredChart::new(vec![(-1.0, 1.0), (-1.0, 1.0)], vec![points, points], 0.01).unwrap()
    }

    #[test]
    fn compose_zero_cases() {
        let m = SpacelikeMetric::flat(2);
        let k = compose_total_connection(&SpacetimeConnection::zero(2), &EMField::zero(2), &m).unwrap();
        assert!(k.coefficients().iter().all(Expr::is_zero));

        let grav = SpacetimeConnection::levi_civita(&SpacelikeMetric::stereographic_sphere(1.0));
        let k = compose_total_connection(&grav, &EMField::zero(2), &SpacelikeMetric::stereographic_sphere(1.0))
            .unwrap();
        let p = point_vars(0.0, &[0.3, -0.2], &[]);
        for (a, b) in k.coefficients().iter().zip(grav.coefficients()) {
            assert!((a.eval(&p) - b.eval(&p)).abs() < 1e-15);
        }
    }

    #[test]
    fn compose_constant_electric_field() {
        let e = 0.7;
        let em = EMField::zero(1).with_component(0, 1, Expr::constant(e));
        let k = compose_total_connection(&SpacetimeConnection::zero(1), &em, &SpacelikeMetric::flat(1))
            .unwrap();
        // F^1_0 = F_10 = -E, entering K_0^1_0 with unit weight.
        assert_eq!(k.get(0, 0, 0).as_const(), Some(-e));
        assert_eq!(k.get(0, 0, 1).as_const(), Some(0.0));
        assert_eq!(k.get(1, 0, 0).as_const(), Some(0.0));
    }

    #[test]
    fn compose_is_additive_in_em() {
        let m = SpacelikeMetric::conformal(2, 1.0 + 0.1 * Expr::x(0).square());
        let grav = SpacetimeConnection::levi_civita(&m);
        let f1 = EMField::from_potential(&[Expr::x(0) * Expr::x(1), Expr::t() * Expr::x(1), Expr::x(0).sin()]);
        let f2 = EMField::from_potential(&[Expr::zero(), Expr::x(1).square(), Expr::t().cos() * Expr::x(0)]);
        let sum = EMField::from_components(
            2,
            f1.components().iter().zip(f2.components()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let k12 = compose_total_connection(&grav, &sum, &m).unwrap();
        let k1 = compose_total_connection(&grav, &f1, &m).unwrap();
        let k02 = compose_total_connection(&SpacetimeConnection::zero(2), &f2, &m).unwrap();
        let p = point_vars(0.4, &[0.2, -0.5], &[]);
        for ((a, b), c) in k12.coefficients().iter().zip(k1.coefficients()).zip(k02.coefficients()) {
            assert!((a.eval(&p) - b.eval(&p) - c.eval(&p)).abs() < 1e-14);
        }
    }

    #[test]
    fn compose_rejects_shape_mismatch() {
        let r = compose_total_connection(&SpacetimeConnection::zero(2), &EMField::zero(1), &SpacelikeMetric::flat(2));
        assert!(matches!(r, Err(GeometryError::Shape(_))));
    }

    #[test]
    fn curvature_of_flat_and_one_dimensional_metrics_vanishes() {
        let g1 = chart1().grid().unwrap();
        let m1 = SpacelikeMetric::conformal(1, 1.0 + Expr::x(0).square());
        assert!(scalar_curvature(&m1, &g1, 0.0).unwrap().values.iter().all(|&r| r == 0.0));
        let g2 = chart2(12).grid().unwrap();
        let r = scalar_curvature(&SpacelikeMetric::flat(2), &g2, 0.0).unwrap();
        assert!(r.values.iter().all(|&r| r.abs() < 1e-14));
    }

    #[test]
    fn sphere_curvature_matches_closed_form() {
        let a = 1.3;
        let grid = chart2(128).grid().unwrap();
        let r = scalar_curvature(&SpacelikeMetric::stereographic_sphere(a), &grid, 0.0).unwrap();
        assert!(r.max_deviation_interior(2.0 / (a * a), 1) < 1e-3);
    }

    #[test]
    fn sphere_curvature_converges_second_order() {
        let a = 1.0;
        let target = 2.0 / (a * a);
        let err = |pts: usize| {
            let grid = chart2(pts).grid().unwrap();
            let r = scalar_curvature(&SpacelikeMetric::stereographic_sphere(a), &grid, 0.0).unwrap();
            r.max_deviation_interior(target, 1)
        };
        let coarse = err(31);
        let fine = err(63);
        let rate = (coarse / fine).log2();
        assert!(rate > 1.7 && rate < 2.5, "observed order {rate}");
    }

    #[test]
    fn curvature_accepts_minimal_grid() {
        let grid = Grid::new(&[(-1.0, 1.0), (-1.0, 1.0)], &[4, 4], 2).unwrap();
        assert!(scalar_curvature(&SpacelikeMetric::flat(2), &grid, 0.0).is_ok());
    }

    #[test]
    fn flat_bundle_validates_exactly() {
        let b = GeometryBundle::flat(chart2(8));
        let rep = validate_geometry(&b);
        assert_eq!(rep.max_residual(), 0.0);
        assert_eq!(rep.min_metric_eigenvalue, 1.0);
    }

    #[test]
    fn constant_electric_field_keeps_structure() {
        let chart = chart1();
        let n = 1;
        let em = EMField::zero(n).with_component(0, 1, Expr::constant(0.8));
        let b = GeometryBundle::new(
            chart,
            SpacelikeMetric::flat(n),
            SpacetimeConnection::zero(n),
            em,
            vec![Expr::constant(0.8) * Expr::x(0), Expr::zero()],
        )
        .unwrap();
        let rep = validate_geometry(&b);
        assert!(rep.max_residual() <= 1e-10, "{rep:?}");
    }

    #[test]
    fn injected_torsion_is_detected() {
        let b = GeometryBundle::flat(chart1());
        let mut k = b.total.clone();
        k.set(0, 0, 1, Expr::constant(0.25));
        let rep = validate_geometry(&b.with_total(k));
        assert!(rep.torsion > 0.2);
        assert!(rep.total_composition > 0.2);
    }

    #[test]
    fn curved_bundle_with_field_passes() {
        let m = SpacelikeMetric::new(
            2,
            vec![
                2.0 + Expr::x(0).sin() * 0.3,
                0.2 * Expr::x(0) * Expr::x(1),
                0.2 * Expr::x(0) * Expr::x(1),
                1.5 + 0.1 * Expr::x(1).square(),
            ],
        )
        .unwrap();
        let a = vec![
            -0.5 * Expr::x(0).square() + Expr::t() * Expr::x(1),
            Expr::t().sin() * Expr::x(1),
            Expr::x(0) * Expr::t().cos(),
        ];
        let b = GeometryBundle::from_potential(chart2(10), m, a).unwrap();
        let rep = validate_geometry(&b);
        assert!(rep.max_residual() <= 1e-8, "{rep:?}");
    }
}
