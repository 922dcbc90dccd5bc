//! Time evolution, weighted inner products, expectations and spectra.

use std::io::{self, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::falg::SpecialQuadratic;
use crate::geometry::GeometryBundle;
use crate::quantum::{node_values, quantum_operator, QuantumError, QuantumOperator, WaveFunction, C64};
use crate::sparse::{BandedLu, CsrMatrix, SparseError, Triplets};

/// Largest admissible `|‖ψ‖² - 1|` for expectations.
pub const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error("linear solve failed at step {step}: {source}")]
    LinearSolve { step: usize, source: SparseError },
    #[error("state is not normalised: ‖ψ‖² = {norm_sqr}")]
    Normalization { norm_sqr: f64 },
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("wave functions live on different grids or time slices")]
    GridMismatch,
    #[error("spectrum needs a time independent scenario and a constant time component")]
    NotStationary,
}

/// `⟨ψ₁, ψ₂⟩ = Σ conj(ψ₁) ψ₂ √|g| dV`.
pub fn inner_product(
    psi1: &WaveFunction,
    psi2: &WaveFunction,
    bundle: &GeometryBundle,
) -> Result<C64, SolverError> {
    if psi1.grid != psi2.grid || psi1.t != psi2.t || psi1.values.len() != psi2.values.len() {
        return Err(SolverError::GridMismatch);
    }
    let w = node_values(&psi1.grid, psi1.t, bundle.metric.sqrt_det());
    Ok(weighted_dot(&psi1.values, &psi2.values, &w) * psi1.grid.cell_volume())
}

fn weighted_dot(a: &[C64], b: &[C64], w: &[f64]) -> C64 {
    a.iter().zip(b).zip(w).map(|((x, y), w)| x.conj() * y * *w).sum()
}

pub fn norm_sqr(psi: &WaveFunction, bundle: &GeometryBundle) -> Result<f64, SolverError> {
    Ok(inner_product(psi, psi, bundle)?.re)
}

/// Scale `ψ` to unit weighted norm; the zero state is returned unchanged.
pub fn normalize(psi: &WaveFunction, bundle: &GeometryBundle) -> Result<WaveFunction, SolverError> {
    let n = norm_sqr(psi, bundle)?.sqrt();
    if n == 0.0 {
        return Ok(psi.clone());
    }
    Ok(psi.with_values(psi.values.iter().map(|v| v / n).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    CrankNicolson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Dirichlet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionConfig {
    pub t_start: f64,
    pub t_end: f64,
    pub steps: usize,
    pub scheme: Scheme,
    pub boundary: Boundary,
}

impl EvolutionConfig {
    pub fn new(t_start: f64, t_end: f64, steps: usize) -> EvolutionConfig {
        EvolutionConfig {
            t_start,
            t_end,
            steps,
            scheme: Scheme::CrankNicolson,
            boundary: Boundary::Dirichlet,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if self.steps == 0 {
            return Err(SolverError::Config("steps must be at least 1".into()));
        }
        if !(self.t_end > self.t_start) {
            return Err(SolverError::Config(format!(
                "t_end = {} must exceed t_start = {}",
                self.t_end, self.t_start
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.steps as f64
    }
}

/// Crank–Nicolson propagator for `i∂₀ψ = ℋ̂₀ψ - (i/2) ρ ψ`, written as
/// `(W + iτB + ½τWρ) ψ⁺ = (W - iτB - ½τWρ) ψ` with `τ = Δt/2` and every
/// coefficient sampled at the half step.
pub struct CrankNicolson<'a> {
    bundle: &'a GeometryBundle,
    hamiltonian: SpecialQuadratic,
    k_factor: f64,
    dt: f64,
    time_dependent: bool,
    cached: Option<(BandedLu, CsrMatrix)>,
}

impl<'a> CrankNicolson<'a> {
    pub fn new(bundle: &'a GeometryBundle, k_factor: f64, dt: f64) -> CrankNicolson<'a> {
        CrankNicolson {
            bundle,
            hamiltonian: SpecialQuadratic::hamiltonian(bundle),
            k_factor,
            dt,
            time_dependent: bundle.is_time_dependent(),
            cached: None,
        }
    }

    fn assemble(&self, t_mid: f64, step: usize) -> Result<(BandedLu, CsrMatrix), SolverError> {
        let op = quantum_operator(&self.hamiltonian, self.bundle, self.k_factor, t_mid)?;
        let grid = op.grid();
        let w = op.weight();
        let rho = node_values(grid, t_mid, &crate::quantum::density_rate(self.bundle));
        let tau = 0.5 * self.dt;
        let b = op.stiffness();
        let len = grid.len();
        let mut lhs = Triplets::new(len, len);
        let mut rhs = Triplets::new(len, len);
        for r in 0..len {
            let diag = w[r] * (1.0 + 0.5 * tau * rho[r]);
            let diag_rhs = w[r] * (1.0 - 0.5 * tau * rho[r]);
            lhs.push(r, r, C64::new(diag, 0.0));
            rhs.push(r, r, C64::new(diag_rhs, 0.0));
            for (c, v) in b.row(r) {
                lhs.push(r, c, C64::new(0.0, tau) * v);
                rhs.push(r, c, C64::new(0.0, -tau) * v);
            }
        }
        let lu = BandedLu::factor(&lhs.to_csr()).map_err(|source| SolverError::LinearSolve { step, source })?;
        Ok((lu, rhs.to_csr()))
    }

    /// Advance `ψ` by one step; `step` labels errors.
    pub fn step(&mut self, psi: &WaveFunction, step: usize) -> Result<WaveFunction, SolverError> {
        let t_mid = psi.t + 0.5 * self.dt;
        if self.time_dependent || self.cached.is_none() {
            self.cached = Some(self.assemble(t_mid, step)?);
        }
        let (lu, rhs) = self.cached.as_ref().expect("assembled above");
        let mut next = rhs.matvec(&psi.values);
        lu.solve_in_place(&mut next);
        Ok(WaveFunction {
            t: psi.t + self.dt,
            grid: psi.grid.clone(),
            values: next,
        })
    }
}

pub fn evolve(
    psi0: &WaveFunction,
    bundle: &GeometryBundle,
    k_factor: f64,
    config: &EvolutionConfig,
) -> Result<WaveFunction, SolverError> {
    evolve_with(psi0, bundle, k_factor, config, |_, _| {})
}

/// Evolve and hand every slice (including the initial one) to `observe`.
pub fn evolve_with(
    psi0: &WaveFunction,
    bundle: &GeometryBundle,
    k_factor: f64,
    config: &EvolutionConfig,
    mut observe: impl FnMut(usize, &WaveFunction),
) -> Result<WaveFunction, SolverError> {
    config.validate()?;
    let mut psi = WaveFunction {
        t: config.t_start,
        ..psi0.clone()
    };
    let mut cn = CrankNicolson::new(bundle, k_factor, config.dt());
    observe(0, &psi);
    for step in 1..=config.steps {
        psi = cn.step(&psi, step)?;
        psi.t = config.t_start + step as f64 * config.dt();
        observe(step, &psi);
    }
    Ok(psi)
}

/// `Re⟨ψ, f̂ψ⟩` and the imaginary part as a Hermiticity diagnostic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Expectation {
    pub value: f64,
    pub imaginary: f64,
}

pub fn expectation(
    op: &QuantumOperator,
    psi: &WaveFunction,
    bundle: &GeometryBundle,
) -> Result<Expectation, SolverError> {
    let norm_sqr = norm_sqr(psi, bundle)?;
    if (norm_sqr - 1.0).abs() > NORMALIZATION_TOL {
        return Err(SolverError::Normalization { norm_sqr });
    }
    let applied = op.apply(psi)?;
    let z = inner_product(psi, &applied, bundle)?;
    Ok(Expectation {
        value: z.re,
        imaginary: z.im,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumConfig {
    pub n_modes: usize,
    /// Relative residual target `‖Ĥφ - Eφ‖ ≤ tol · max(1, |E|)`.
    pub tol: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl SpectrumConfig {
    pub fn new(n_modes: usize) -> SpectrumConfig {
        SpectrumConfig {
            n_modes,
            tol: 1e-9,
            max_iterations: 400,
            seed: 0x00c0_ffee,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<f64>,
    pub eigenstates: Vec<WaveFunction>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

impl SpectrumResult {
    /// Group eigenvalues closer than `tol` to their predecessor; returns
    /// `(mean value, multiplicity)` per cluster.
    pub fn multiplicities(&self, tol: f64) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize, f64)> = Vec::new();
        for &e in &self.eigenvalues {
            match out.last_mut() {
                Some((sum, count, last)) if (e - *last).abs() <= tol => {
                    *sum += e;
                    *count += 1;
                    *last = e;
                }
                _ => out.push((e, 1, e)),
            }
        }
        out.into_iter().map(|(s, c, _)| (s / c as f64, c)).collect()
    }
}

pub fn spectrum(
    f: &SpecialQuadratic,
    bundle: &GeometryBundle,
    k_factor: f64,
    n_modes: usize,
) -> Result<SpectrumResult, SolverError> {
    spectrum_with(f, bundle, k_factor, &SpectrumConfig::new(n_modes))
}

type Block = DMatrix<C64>;

fn orthonormalize(y: Block) -> Block {
    y.qr().q()
}

/// Lowest eigenpairs of `f̂` by shift-invert block iteration on the
/// symmetrised operator `W^{-1/2} B W^{-1/2}` with Rayleigh–Ritz projection.
pub fn spectrum_with(
    f: &SpecialQuadratic,
    bundle: &GeometryBundle,
    k_factor: f64,
    config: &SpectrumConfig,
) -> Result<SpectrumResult, SolverError> {
    if config.n_modes == 0 {
        return Err(SolverError::Config("n_modes must be at least 1".into()));
    }
    if bundle.is_time_dependent() || !f.classify(bundle).constant_time {
        return Err(SolverError::NotStationary);
    }
    let op = quantum_operator(f, bundle, k_factor, 0.0)?;
    let grid = op.grid().clone();
    let len = grid.len();
    let block = (config.n_modes + config.n_modes.max(4)).min(len);
    if config.n_modes > len {
        return Err(SolverError::Config(format!(
            "{} modes requested on a grid of {len} nodes",
            config.n_modes
        )));
    }
    let sqrt_w: Vec<f64> = op.weight().iter().map(|w| w.sqrt()).collect();
    let b = op.stiffness();
    let apply_h = |y: &[C64]| -> Vec<C64> {
        let scaled: Vec<C64> = y.iter().zip(&sqrt_w).map(|(v, s)| v / *s).collect();
        b.matvec(&scaled).iter().zip(&sqrt_w).map(|(v, s)| v / *s).collect()
    };
    let shifted = |sigma: f64| -> Result<BandedLu, SolverError> {
        let w: Vec<C64> = op.weight().iter().map(|w| C64::new(-sigma * w, 0.0)).collect();
        let m = b.combine(C64::new(1.0, 0.0), &CsrMatrix::diagonal(&w), C64::new(1.0, 0.0));
        BandedLu::factor(&m).map_err(|source| SolverError::LinearSolve { step: 0, source })
    };
    let h_scaled = {
        let mut t = Triplets::new(len, len);
        for r in 0..len {
            for (c, v) in b.row(r) {
                t.push(r, c, v / (sqrt_w[r] * sqrt_w[c]));
            }
        }
        t.to_csr()
    };
    let mut sigma = h_scaled.gershgorin_lower() - 1.0;
    let mut lu = shifted(sigma)?;
    let mut ceiling = f64::INFINITY;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut y = orthonormalize(Block::from_fn(len, block, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }));
    let mut worst = f64::INFINITY;
    for iteration in 1..=config.max_iterations {
        let mut z = Block::zeros(len, block);
        for j in 0..block {
            let mut col: Vec<C64> = y.column(j).iter().zip(&sqrt_w).map(|(v, s)| v * *s).collect();
            lu.solve_in_place(&mut col);
            for (i, v) in col.iter().enumerate() {
                z[(i, j)] = v * sqrt_w[i];
            }
        }
        let q = orthonormalize(z);
        let mut hq = Block::zeros(len, block);
        for j in 0..block {
            let col: Vec<C64> = q.column(j).iter().copied().collect();
            for (i, v) in apply_h(&col).into_iter().enumerate() {
                hq[(i, j)] = v;
            }
        }
        let t = q.adjoint() * &hq;
        let t = (&t + t.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vecs = Block::from_fn(block, block, |i, j| eig.eigenvectors[(i, order[j])]);
        let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        y = &q * &vecs;
        let hy = &hq * &vecs;
        let residuals: Vec<f64> = (0..config.n_modes)
            .map(|j| (hy.column(j) - y.column(j) * C64::new(values[j], 0.0)).norm())
            .collect();
        worst = (0..config.n_modes)
            .map(|j| residuals[j] / values[j].abs().max(1.0))
            .fold(0.0, f64::max);
        if worst <= config.tol {
            let dv = grid.cell_volume().sqrt();
            let eigenstates = (0..config.n_modes)
                .map(|j| {
                    let col = y.column(j);
                    let pivot = col
                        .iter()
                        .copied()
                        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
                        .unwrap_or(C64::new(1.0, 0.0));
                    let phase = pivot.conj() / pivot.norm();
                    WaveFunction {
                        t: 0.0,
                        grid: grid.clone(),
                        values: col
                            .iter()
                            .zip(&sqrt_w)
                            .map(|(v, s)| v * phase / (*s * dv))
                            .collect(),
                    }
                })
                .collect();
            return Ok(SpectrumResult {
                eigenvalues: values[..config.n_modes].to_vec(),
                eigenstates,
                residuals,
                iterations: iteration,
            });
        }
        // Move the shift up under the lowest Ritz value, accepting it only
        // when the inertia count confirms no eigenvalue lies below. Rejected
        // shifts become a ceiling and later attempts bisect towards it.
        let spread = values[config.n_modes - 1] - values[0];
        let candidate = (values[0] - 0.1 * spread - 1e-3 * values[0].abs().max(1.0)).min(0.5 * (sigma + ceiling));
        let gap = values[0] - sigma;
        let settled = gap <= 0.2 * spread + 2e-3 * values[0].abs().max(1.0);
        if !settled && candidate - sigma > 0.25 * gap {
            match shifted(candidate) {
                Ok(better) if better.negative_pivots() == 0 => {
                    lu = better;
                    sigma = candidate;
                }
                _ => ceiling = candidate,
            }
        }
    }
    Err(SolverError::Convergence {
        iterations: config.max_iterations,
        residual: worst,
    })
}

/// Flat binary dump: `n` and the grid dimensions as little-endian `u32`,
/// then the values as little-endian `(re, im)` `f64` pairs.
pub fn write_field_dump<W: Write>(mut out: W, psi: &WaveFunction) -> io::Result<()> {
    let dims = psi.grid.dims();
    out.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in &psi.values {
        out.write_all(&v.re.to_le_bytes())?;
        out.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}
