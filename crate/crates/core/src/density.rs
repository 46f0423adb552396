//! Density matrices on the coded-qubit basis `{|ψ_1⟩, …, |ψ_N⟩}`.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// An `N×N` Hermitian, unit-trace matrix.
///
/// Real and imaginary parts are stored separately in a zero-padded
/// `(N+2)×(N+2)` row-major layout, so the tridiagonal commutator in the
/// integrator can read neighbouring entries without edge branches. The
/// border is always zero.
#[derive(Clone, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    pub(crate) re: Vec<f64>,
    pub(crate) im: Vec<f64>,
}

impl DensityMatrix {
    pub fn zeros(n: usize) -> Self {
        let s = n + 2;
        Self {
            n,
            re: vec![0.0; s * s],
            im: vec![0.0; s * s],
        }
    }

    /// The pure state localized on site `site` (zero-based).
    pub fn pure_site(n: usize, site: usize) -> Self {
        assert!(site < n, "site {site} out of range for n = {n}");
        let mut rho = Self::zeros(n);
        rho.set(site, site, Complex64::new(1.0, 0.0));
        rho
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalized) amplitude vector; the
    /// result is normalized.
    pub fn from_pure(amplitudes: &[Complex64]) -> Self {
        let n = amplitudes.len();
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        let mut rho = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                rho.set(i, j, amplitudes[i] * amplitudes[j].conj() / norm);
            }
        }
        rho
    }

    /// A diagonal state with the given populations, normalized to unit trace.
    pub fn from_diagonal(populations: &[f64]) -> Self {
        let n = populations.len();
        let total: f64 = populations.iter().sum();
        let mut rho = Self::zeros(n);
        for (i, p) in populations.iter().enumerate() {
            rho.set(i, i, Complex64::new(p / total, 0.0));
        }
        rho
    }

    /// Copies a dense matrix verbatim; no Hermiticity or trace is enforced.
    pub fn from_dense(m: &DMatrix<Complex64>) -> Self {
        assert!(m.is_square(), "density matrix must be square");
        let n = m.nrows();
        let mut rho = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                rho.set(i, j, m[(i, j)]);
            }
        }
        rho
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub(crate) fn stride(&self) -> usize {
        self.n + 2
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        (i + 1) * self.stride() + j + 1
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        assert!(i < self.n && j < self.n);
        let k = self.offset(i, j);
        Complex64::new(self.re[k], self.im[k])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: Complex64) {
        assert!(i < self.n && j < self.n);
        let k = self.offset(i, j);
        self.re[k] = value.re;
        self.im[k] = value.im;
    }

    /// Real part of the diagonal entry `ρ_ii`.
    #[inline]
    pub fn population(&self, i: usize) -> f64 {
        self.re[self.offset(i, i)]
    }

    /// Overlap with the receiver node, `ρ_NN`.
    #[inline]
    pub fn fidelity(&self) -> f64 {
        self.population(self.n - 1)
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.population(i)).collect()
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// `Tr(ρ²)`.
    pub fn purity(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                // Tr(ρρ) = Σ ρ_ij ρ_ji; for Hermitian ρ this is Σ |ρ_ij|².
                acc += (self.get(i, j) * self.get(j, i)).re;
            }
        }
        acc
    }

    /// `Σ_i x_i ρ_ii` for a diagonal observable.
    pub fn expect_diagonal(&self, diag: &[f64]) -> f64 {
        assert_eq!(diag.len(), self.n);
        diag.iter().enumerate().map(|(i, x)| x * self.population(i)).sum()
    }

    /// `max |ρ_ij − conj(ρ_ji)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    /// Frobenius norm of `self − other`.
    pub fn frobenius_distance(&self, other: &DensityMatrix) -> f64 {
        assert_eq!(self.n, other.n);
        self.re
            .iter()
            .zip(&other.re)
            .chain(self.im.iter().zip(&other.im))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    /// Replaces `ρ` by `(ρ + ρ†)/2` and divides by the real trace.
    pub fn symmetrize_and_normalize(&mut self) {
        let n = self.n;
        for i in 0..n {
            for j in i..n {
                let a = self.get(i, j);
                let b = self.get(j, i).conj();
                let h = (a + b) * 0.5;
                self.set(i, j, h);
                self.set(j, i, h.conj());
            }
        }
        let tr = self.trace().re;
        self.scale(1.0 / tr);
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        self.re.iter_mut().for_each(|v| *v *= factor);
        self.im.iter_mut().for_each(|v| *v *= factor);
    }

    /// Adds `weight · other` entrywise.
    pub fn add_scaled(&mut self, other: &DensityMatrix, weight: f64) {
        assert_eq!(self.n, other.n);
        for (a, b) in self.re.iter_mut().zip(&other.re) {
            *a += weight * b;
        }
        for (a, b) in self.im.iter_mut().zip(&other.im) {
            *a += weight * b;
        }
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let dense = self.to_dense();
        let herm = (&dense + dense.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

impl std::fmt::Debug for DensityMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityMatrix")
            .field("n", &self.n)
            .field("entries", &self.to_dense())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_site_has_unit_trace() {
        let rho = DensityMatrix::pure_site(4, 0);
        assert_eq!(rho.trace(), Complex64::new(1.0, 0.0));
        assert_eq!(rho.fidelity(), 0.0);
        assert_eq!(rho.purity(), 1.0);
    }

    #[test]
    fn padding_stays_zero_after_set() {
        let mut rho = DensityMatrix::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                rho.set(i, j, Complex64::new(1.0, 1.0));
            }
        }
        let s = rho.stride();
        for r in 0..s {
            for c in 0..s {
                if r == 0 || c == 0 || r == s - 1 || c == s - 1 {
                    assert_eq!(rho.re[r * s + c], 0.0);
                    assert_eq!(rho.im[r * s + c], 0.0);
                }
            }
        }
    }

    #[test]
    fn symmetrize_removes_antihermitian_part() {
        let mut rho = DensityMatrix::from_diagonal(&[0.5, 0.5]);
        rho.set(0, 1, Complex64::new(0.1, 0.2));
        rho.set(1, 0, Complex64::new(0.3, 0.0));
        rho.set(0, 0, Complex64::new(1.0, 0.0));
        rho.symmetrize_and_normalize();
        assert!(rho.hermiticity_defect() < 1e-15);
        assert!((rho.trace().re - 1.0).abs() < 1e-15);
        assert!((rho.get(0, 1) - Complex64::new(0.2 / 1.5, 0.1 / 1.5)).norm() < 1e-15);
    }

    #[test]
    fn min_eigenvalue_of_pure_state_is_zero() {
        let rho = DensityMatrix::from_pure(&[Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]);
        assert!(rho.min_eigenvalue().abs() < 1e-14);
    }
}
