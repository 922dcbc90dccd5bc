//! Complex sparse matrices in CSR layout and a banded LU factorisation.

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("zero pivot at row {row} during banded factorisation")]
    ZeroPivot { row: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Coordinate-list builder; duplicates are summed on conversion.
#[derive(Clone, Debug, Default)]
pub struct Triplets {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Triplets {
        Triplets {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: C64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != C64::new(0.0, 0.0) {
            self.entries.push((row, col, value));
        }
    }

    pub fn to_csr(mut self) -> CsrMatrix {
        self.entries.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut values: Vec<C64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    pub fn diagonal(d: &[C64]) -> CsrMatrix {
        let mut t = Triplets::new(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            t.push(i, i, v);
        }
        t.to_csr()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.row(r)
            .find(|&(cc, _)| cc == c)
            .map_or(C64::new(0.0, 0.0), |(_, v)| v)
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension");
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn adjoint(&self) -> CsrMatrix {
        let mut t = Triplets::new(self.ncols, self.nrows);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                t.push(c, r, v.conj());
            }
        }
        t.to_csr()
    }

    /// `self · other`.
    pub fn mul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows, "product dimension");
        let mut t = Triplets::new(self.nrows, other.ncols);
        for r in 0..self.nrows {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    t.push(r, c, a * b);
                }
            }
        }
        t.to_csr()
    }

    /// `alpha · self + beta · other`.
    pub fn combine(&self, alpha: C64, other: &CsrMatrix, beta: C64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = Triplets::new(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                t.push(r, c, alpha * v);
            }
            for (c, v) in other.row(r) {
                t.push(r, c, beta * v);
            }
        }
        t.to_csr()
    }

    /// `max |A_rc - conj(A_cr)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    /// `(lower, upper)` bandwidths.
    pub fn bandwidth(&self) -> (usize, usize) {
        let (mut lo, mut hi) = (0, 0);
        for r in 0..self.nrows {
            for (c, _) in self.row(r) {
                if c < r {
                    lo = lo.max(r - c);
                } else {
                    hi = hi.max(c - r);
                }
            }
        }
        (lo, hi)
    }

    /// Gershgorin lower bound on the real parts of the eigenvalues.
    pub fn gershgorin_lower(&self) -> f64 {
        (0..self.nrows)
            .map(|r| {
                let mut diag = 0.0;
                let mut off = 0.0;
                for (c, v) in self.row(r) {
                    if c == r {
                        diag = v.re;
                    } else {
                        off += v.norm();
                    }
                }
                diag - off
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// LU factorisation of a banded matrix without pivoting, suitable for
/// Hermitian positive definite and diagonally dominant complex systems.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row-major band storage: entry `(i, j)` lives at `i * width + (j + kl - i)`.
    band: Vec<C64>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<BandedLu, SparseError> {
        if a.nrows() != a.ncols() {
            return Err(SparseError::Dimension(format!(
                "{}x{} matrix is not square",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let (kl, ku) = a.bandwidth();
        let width = kl + ku + 1;
        let mut band = vec![C64::new(0.0, 0.0); n * width];
        for r in 0..n {
            for (c, v) in a.row(r) {
                band[r * width + c + kl - r] = v;
            }
        }
        let scale = band.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for k in 0..n {
            let pivot = band[k * width + kl];
            if pivot.norm() <= 1e-14 * scale {
                return Err(SparseError::ZeroPivot { row: k });
            }
            let inv = pivot.inv();
            let row_end = (k + ku).min(n - 1);
            for i in k + 1..=(k + kl).min(n - 1) {
                let lik_pos = i * width + k + kl - i;
                let l = band[lik_pos] * inv;
                band[lik_pos] = l;
                if l == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in k + 1..=row_end {
                    let u = band[k * width + j + kl - k];
                    band[i * width + j + kl - i] -= l * u;
                }
            }
        }
        Ok(BandedLu { n, kl, ku, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Pivots with negative real part. For a Hermitian matrix this is the
    /// number of negative eigenvalues (Sylvester inertia).
    pub fn negative_pivots(&self) -> usize {
        let width = self.kl + self.ku + 1;
        (0..self.n).filter(|&k| self.band[k * width + self.kl].re < 0.0).count()
    }

    pub fn solve_in_place(&self, b: &mut [C64]) {
        assert_eq!(b.len(), self.n, "rhs dimension");
        let width = self.kl + self.ku + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let mut s = b[i];
            for j in lo..i {
                s -= self.band[i * width + j + self.kl - i] * b[j];
            }
            b[i] = s;
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.ku).min(self.n - 1);
            let mut s = b[i];
            for j in i + 1..=hi {
                s -= self.band[i * width + j + self.kl - i] * b[j];
            }
            b[i] = s / self.band[i * width + self.kl];
        }
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn negative_pivots_count_eigenvalues_below_shift() {
        // Diagonal plus weak coupling: eigenvalues stay close to 1..=6.
        let n = 6;
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, c(1.0 + i as f64, 0.0));
            if i + 1 < n {
                t.push(i, i + 1, c(0.0, 0.05));
                t.push(i + 1, i, c(0.0, -0.05));
            }
        }
        let a = t.to_csr();
        for (shift, below) in [(0.5, 0), (2.5, 2), (4.5, 4), (6.5, 6)] {
            let m = a.combine(c(1.0, 0.0), &CsrMatrix::diagonal(&vec![c(-shift, 0.0); n]), c(1.0, 0.0));
            assert_eq!(BandedLu::factor(&m).unwrap().negative_pivots(), below, "shift {shift}");
        }
    }

    fn sample() -> CsrMatrix {
        let n = 6;
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, c(4.0 + i as f64, 0.0));
            if i + 1 < n {
                t.push(i, i + 1, c(-1.0, 0.5));
                t.push(i + 1, i, c(-1.0, -0.5));
            }
            if i + 2 < n {
                t.push(i, i + 2, c(0.2, 0.0));
                t.push(i + 2, i, c(0.2, 0.0));
            }
        }
        t.push(0, 0, c(1.0, 0.0));
        t.to_csr()
    }

    #[test]
    fn duplicates_sum_and_structure() {
        let a = sample();
        assert_eq!(a.get(0, 0), c(5.0, 0.0));
        assert_eq!(a.bandwidth(), (2, 2));
        assert_eq!(a.hermitian_defect(), 0.0);
        assert_eq!(a.adjoint(), a);
    }

    #[test]
    fn banded_solve_matches_matvec() {
        let a = sample().combine(c(1.0, 0.0), &CsrMatrix::diagonal(&[c(0.0, 0.3); 6]), c(1.0, 0.0));
        let x: Vec<C64> = (0..6).map(|i| c(i as f64, 1.0 - i as f64 * 0.5)).collect();
        let b = a.matvec(&x);
        let lu = BandedLu::factor(&a).unwrap();
        let y = lu.solve(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn product_and_gershgorin() {
        let a = sample();
        let id = CsrMatrix::diagonal(&[c(1.0, 0.0); 6]);
        assert_eq!(a.mul(&id), a);
        assert!(a.gershgorin_lower() > 0.0);
        let singular = CsrMatrix::diagonal(&[c(1.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(
            BandedLu::factor(&singular).unwrap_err(),
            SparseError::ZeroPivot { row: 1 }
        );
    }
}
