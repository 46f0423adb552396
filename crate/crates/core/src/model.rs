//! The dual Heisenberg chain, both as the `N`-dimensional single-excitation
//! model used by the integrators and as the full `2^(2N)`-dimensional
//! Hilbert-space oracle it is validated against.
//!
//! Spin `(chain c, site n)` maps to bit `c·N + n` of a full-space basis
//! index; a set bit is an excitation (`σ_z = +1`).

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::{ChainConfig, FieldConvention};
use crate::density::DensityMatrix;
use crate::error::{Error, Result};

/// Largest chain length the full-space oracle accepts (`4^6 = 4096` states).
pub const MAX_ORACLE_SITES: usize = 6;

/// Effective Hamiltonian and receiver parity on the coded basis.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveModel {
    /// Diagonal of the tridiagonal Hamiltonian.
    pub diag: Vec<f64>,
    /// Hopping between sites `i` and `i+1`, length `N-1`.
    pub offdiag: Vec<f64>,
    /// Eigenvalues of the parity operator `X = P_even − P_odd`.
    pub parity: Vec<f64>,
}

impl EffectiveModel {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn hamiltonian(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut h = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.diag));
        for (i, &t) in self.offdiag.iter().enumerate() {
            h[(i, i + 1)] = t;
            h[(i + 1, i)] = t;
        }
        debug_assert_eq!(h.nrows(), n);
        h
    }

    pub fn parity_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.parity))
    }

    /// `⟨X⟩ = Tr(Xρ)`.
    pub fn expect_parity(&self, rho: &DensityMatrix) -> f64 {
        rho.expect_diagonal(&self.parity)
    }

    /// Same model with the sign of the Hamiltonian flipped.
    pub fn negated(&self) -> Self {
        Self {
            diag: self.diag.iter().map(|d| -d).collect(),
            offdiag: self.offdiag.iter().map(|t| -t).collect(),
            parity: self.parity.clone(),
        }
    }

    /// Same parity operator with `H = 0`.
    pub fn without_hamiltonian(&self) -> Self {
        Self {
            diag: vec![0.0; self.n()],
            offdiag: vec![0.0; self.n() - 1],
            parity: self.parity.clone(),
        }
    }

    pub fn to_dump(&self) -> ModelDump {
        let uniform = self.offdiag.windows(2).all(|w| w[0] == w[1]);
        ModelDump {
            n: self.n(),
            diag: self.diag.clone(),
            offdiag: if uniform {
                Hopping::Uniform(self.offdiag.first().copied().unwrap_or(0.0))
            } else {
                Hopping::PerBond(self.offdiag.clone())
            },
            parity: self.parity.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_dump())?)
    }
}

/// JSON debug dump of an [`EffectiveModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDump {
    pub n: usize,
    pub diag: Vec<f64>,
    pub offdiag: Hopping,
    pub parity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Hopping {
    Uniform(f64),
    PerBond(Vec<f64>),
}

impl From<ModelDump> for EffectiveModel {
    fn from(d: ModelDump) -> Self {
        let offdiag = match d.offdiag {
            Hopping::Uniform(t) => vec![t; d.n.saturating_sub(1)],
            Hopping::PerBond(v) => v,
        };
        Self {
            diag: d.diag,
            offdiag,
            parity: d.parity,
        }
    }
}

/// Logical qubit `α|0⟩ + β|1⟩` carried by the dual rail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodedQubit {
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl CodedQubit {
    /// Normalizes `(α, β)`; fails on the zero vector.
    pub fn new(alpha: Complex64, beta: Complex64) -> Result<Self> {
        let norm = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::config("qubit", "amplitudes must not both vanish"));
        }
        Ok(Self {
            alpha: alpha / norm,
            beta: beta / norm,
        })
    }

    pub fn zero() -> Self {
        Self {
            alpha: Complex64::new(1.0, 0.0),
            beta: Complex64::new(0.0, 0.0),
        }
    }

    pub fn one() -> Self {
        Self {
            alpha: Complex64::new(0.0, 0.0),
            beta: Complex64::new(1.0, 0.0),
        }
    }

    pub fn plus() -> Self {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self { alpha: a, beta: a }
    }
}

/// Edges touching each site of an open chain.
fn bond_count(n: usize, site: usize) -> usize {
    if site == 0 || site == n - 1 {
        1
    } else {
        2
    }
}

/// Effective tridiagonal model of the dual chain restricted to the coded
/// single-excitation sector.
///
/// Uniform energy shifts (the ground-state energy of the spectator chain and
/// the all-site field term) are dropped; they commute with every state in
/// the sector.
pub fn build_effective_model(config: &ChainConfig) -> Result<EffectiveModel> {
    let n = config.n_sites;
    if n < 2 {
        return Err(Error::config("n_sites", format!("must be at least 2, got {n}")));
    }
    let j = config.coupling;
    let mut diag: Vec<f64> = (0..n)
        .map(|site| j * ((n - 1) as f64 - 2.0 * bond_count(n, site) as f64))
        .collect();
    if config.field_convention == FieldConvention::ExcludeReceiver {
        // The excited chain loses one unit of field energy only when the
        // excitation sits on the unbiased receiver spin.
        diag[n - 1] -= 2.0 * config.field;
    }
    let offdiag = vec![2.0 * j; n - 1];
    let mut parity = vec![1.0; n];
    parity[n - 1] = -1.0;
    Ok(EffectiveModel {
        diag,
        offdiag,
        parity,
    })
}

/// Sender-encoded state: all weight on node 1.
pub fn initial_state(model: &EffectiveModel) -> DensityMatrix {
    DensityMatrix::pure_site(model.n(), 0)
}

/// Compressed-row real sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    fn from_rows(dim: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if v != 0.0 {
                    cols.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            dim,
            row_ptr,
            cols,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|r| self.row(r).map(|(c, a)| v[c] * a).sum())
            .collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }
}

/// Brute-force model of both chains on the full Hilbert space.
#[derive(Debug, Clone)]
pub struct FullModel {
    pub n_sites: usize,
    pub dimension: usize,
    /// `H₁ + H₂` including field and `σ_z σ_z` constants.
    pub hamiltonian: SparseMatrix,
    /// `P_even − P_odd` on the two receiver spins; diagonal in the
    /// computational basis.
    pub parity_op: Vec<f64>,
    /// The field term `Σ σ_z` (without the factor `B`) over the spins the
    /// configured convention covers; diagonal.
    pub field_op: Vec<f64>,
    /// `|ψ_n⟩ = α|0⟩⁽¹⁾_n|1⟩⁽²⁾_n + β|1⟩⁽¹⁾_n|0⟩⁽²⁾_n` as dense vectors.
    pub coded_basis: Vec<Vec<Complex64>>,
}

/// Bit index of a spin in a full-space basis label.
#[inline]
pub fn spin_bit(n_sites: usize, chain: usize, site: usize) -> usize {
    chain * n_sites + site
}

#[inline]
fn sigma_z(state: usize, bit: usize) -> f64 {
    if state >> bit & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

pub fn build_full_model(config: &ChainConfig, qubit: CodedQubit) -> Result<FullModel> {
    let n = config.n_sites;
    if n < 2 {
        return Err(Error::config("n_sites", format!("must be at least 2, got {n}")));
    }
    if n > MAX_ORACLE_SITES {
        return Err(Error::OracleScale(n));
    }
    let dim = 1usize << (2 * n);
    let j = config.coupling;
    let field_sites = match config.field_convention {
        FieldConvention::AllSites => n,
        FieldConvention::ExcludeReceiver => n - 1,
    };

    let mut rows = Vec::with_capacity(dim);
    let mut field_op = Vec::with_capacity(dim);
    let mut parity_op = Vec::with_capacity(dim);
    for s in 0..dim {
        let mut row = Vec::new();
        let mut diag = 0.0;
        let mut field = 0.0;
        for chain in 0..2 {
            for site in 0..field_sites {
                field += sigma_z(s, spin_bit(n, chain, site));
            }
            for site in 0..n - 1 {
                let a = spin_bit(n, chain, site);
                let b = spin_bit(n, chain, site + 1);
                diag += j * sigma_z(s, a) * sigma_z(s, b);
                // σxσx + σyσy = 2(σ⁺σ⁻ + σ⁻σ⁺) swaps antiparallel neighbours.
                if (s >> a & 1) != (s >> b & 1) {
                    row.push((s ^ (1 << a) ^ (1 << b), 2.0 * j));
                }
            }
        }
        row.push((s, diag + config.field * field));
        rows.push(row);
        field_op.push(field);

        let r1 = s >> spin_bit(n, 0, n - 1) & 1;
        let r2 = s >> spin_bit(n, 1, n - 1) & 1;
        parity_op.push(if r1 == r2 { 1.0 } else { -1.0 });
    }

    let coded_basis = (0..n)
        .map(|site| {
            let mut v = vec![Complex64::new(0.0, 0.0); dim];
            // α: chain 1 empty, chain 2 excited; β: the reverse.
            v[1 << spin_bit(n, 1, site)] += qubit.alpha;
            v[1 << spin_bit(n, 0, site)] += qubit.beta;
            v
        })
        .collect();

    Ok(FullModel {
        n_sites: n,
        dimension: dim,
        hamiltonian: SparseMatrix::from_rows(dim, rows),
        parity_op,
        field_op,
        coded_basis,
    })
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

impl FullModel {
    /// `⟨ψ_i|H|ψ_j⟩` on the coded basis.
    pub fn restricted_hamiltonian(&self) -> DMatrix<Complex64> {
        let images: Vec<_> = self
            .coded_basis
            .iter()
            .map(|v| self.hamiltonian.mul_vec(v))
            .collect();
        DMatrix::from_fn(self.n_sites, self.n_sites, |i, j| {
            inner(&self.coded_basis[i], &images[j])
        })
    }

    /// `⟨ψ_i|X|ψ_j⟩` on the coded basis.
    pub fn restricted_parity(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n_sites, self.n_sites, |i, j| {
            let xv: Vec<_> = self.coded_basis[j]
                .iter()
                .zip(&self.parity_op)
                .map(|(a, x)| a * x)
                .collect();
            inner(&self.coded_basis[i], &xv)
        })
    }

    /// Largest norm of the component of `H|ψ_j⟩` and `X|ψ_j⟩` lying outside
    /// the coded span.
    pub fn closure_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for v in &self.coded_basis {
            let hv = self.hamiltonian.mul_vec(v);
            let xv: Vec<_> = v.iter().zip(&self.parity_op).map(|(a, x)| a * x).collect();
            for image in [hv, xv] {
                let mut residual = image.clone();
                for b in &self.coded_basis {
                    let c = inner(b, &image);
                    for (r, bb) in residual.iter_mut().zip(b) {
                        *r -= c * bb;
                    }
                }
                let norm = residual.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                worst = worst.max(norm);
            }
        }
        worst
    }

    /// Largest entry of `[B_op, P]`, where `P` projects onto the coded span
    /// and `B_op` is the field term.
    pub fn field_commutator_norm(&self) -> f64 {
        // P has support only on the coded vectors' nonzero components, and
        // B_op is diagonal, so ([B,P])_ab = (b_a − b_b) P_ab.
        let support: Vec<usize> = {
            let mut s: Vec<usize> = self
                .coded_basis
                .iter()
                .flat_map(|v| v.iter().enumerate().filter(|(_, z)| z.norm() > 0.0).map(|(i, _)| i))
                .collect();
            s.sort_unstable();
            s.dedup();
            s
        };
        let mut worst: f64 = 0.0;
        for &a in &support {
            for &b in &support {
                let p_ab: Complex64 = self.coded_basis.iter().map(|v| v[a] * v[b].conj()).sum();
                worst = worst.max(((self.field_op[a] - self.field_op[b]) * p_ab).norm());
            }
        }
        worst
    }

    /// `max_n ⟨ψ_n|Z|ψ_n⟩ − min_n ⟨ψ_n|Z|ψ_n⟩` for the field operator `Z = Σσ_z`
    /// (in units of `B`). Zero when the field term acts
    /// as a multiple of the identity on the coded subspace.
    pub fn restricted_field_spread(&self) -> f64 {
        let values: Vec<f64> = self
            .coded_basis
            .iter()
            .map(|v| v.iter().zip(&self.field_op).map(|(z, b)| z.norm_sqr() * b).sum())
            .collect();
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        hi - lo
    }

    /// Gram matrix of the coded basis.
    pub fn coded_gram(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n_sites, self.n_sites, |i, j| {
            inner(&self.coded_basis[i], &self.coded_basis[j])
        })
    }

    /// Number of excitations in one chain for a basis label.
    pub fn chain_excitations(&self, state: usize, chain: usize) -> u32 {
        let n = self.n_sites;
        let mask = ((1usize << n) - 1) << (chain * n);
        (state & mask).count_ones()
    }
}

/// Compares a coded-basis restriction with the effective Hamiltonian,
/// allowing a single real offset `c·I`. Returns `(offset, max deviation)`.
pub fn restriction_deviation(restricted: &DMatrix<Complex64>, model: &EffectiveModel) -> (f64, f64) {
    let h = model.hamiltonian();
    let n = model.n();
    let offset = (0..n).map(|i| restricted[(i, i)].re - h[(i, i)]).sum::<f64>() / n as f64;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let expected = h[(i, j)] + if i == j { offset } else { 0.0 };
            worst = worst.max((restricted[(i, j)] - expected).norm());
        }
    }
    (offset, worst)
}
