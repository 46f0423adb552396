//! The same Euler–Maruyama SME scheme applied on the full `4^N`-dimensional
//! Hilbert space of both chains. Used only as an oracle for short chains.

use num_complex::Complex64;

use crate::config::ChainConfig;
use crate::error::{Error, Result};
use crate::model::FullModel;

pub struct FullSpaceSme<'a> {
    model: &'a FullModel,
    dt: f64,
    k: f64,
    noise_gain: f64,
    rho: Vec<Complex64>,
    work: Vec<Complex64>,
    steps: u64,
}

impl<'a> FullSpaceSme<'a> {
    /// Starts from the coded state on node 1, `|ψ_1⟩⟨ψ_1|`.
    pub fn new(model: &'a FullModel, config: &ChainConfig) -> Self {
        let dim = model.dimension;
        let psi = &model.coded_basis[0];
        let mut rho = vec![Complex64::new(0.0, 0.0); dim * dim];
        for (a, pa) in psi.iter().enumerate().filter(|(_, z)| z.norm_sqr() > 0.0) {
            for (b, pb) in psi.iter().enumerate().filter(|(_, z)| z.norm_sqr() > 0.0) {
                rho[a * dim + b] = pa * pb.conj();
            }
        }
        Self {
            model,
            dt: config.dt,
            k: config.meas_strength,
            noise_gain: (2.0 * config.efficiency * config.meas_strength).sqrt(),
            rho,
            work: vec![Complex64::new(0.0, 0.0); dim * dim],
            steps: 0,
        }
    }

    pub fn density(&self) -> &[Complex64] {
        &self.rho
    }

    pub fn expect_parity(&self) -> f64 {
        let dim = self.model.dimension;
        (0..dim).map(|a| self.model.parity_op[a] * self.rho[a * dim + a].re).sum()
    }

    /// `⟨ψ_N|ρ|ψ_N⟩`, the weight on the coded receiver state.
    pub fn coded_receiver_overlap(&self) -> f64 {
        let dim = self.model.dimension;
        let psi = &self.model.coded_basis[self.model.n_sites - 1];
        let support: Vec<usize> = (0..dim).filter(|&a| psi[a].norm_sqr() > 0.0).collect();
        let mut acc = Complex64::new(0.0, 0.0);
        for &a in &support {
            for &b in &support {
                acc += psi[a].conj() * self.rho[a * dim + b] * psi[b];
            }
        }
        acc.re
    }

    /// `Tr(P_odd ρ)` on the receiver spins.
    pub fn odd_parity_weight(&self) -> f64 {
        0.5 * (1.0 - self.expect_parity())
    }

    pub fn step(&mut self, dw: f64) -> Result<()> {
        let dim = self.model.dimension;
        let h = &self.model.hamiltonian;
        let x = &self.model.parity_op;
        let expectation = self.expect_parity();
        let innovation = self.noise_gain * dw;
        let kdt = self.k * self.dt;
        let minus_i_dt = Complex64::new(0.0, -self.dt);

        // work = [H, ρ]; H is real symmetric, so (ρH)_ab = Σ_c ρ_ac H_bc.
        for a in 0..dim {
            for b in 0..dim {
                let mut acc = Complex64::new(0.0, 0.0);
                for (c, v) in h.row(a) {
                    acc += self.rho[c * dim + b] * v;
                }
                for (c, v) in h.row(b) {
                    acc -= self.rho[a * dim + c] * v;
                }
                self.work[a * dim + b] = acc;
            }
        }
        for a in 0..dim {
            for b in 0..dim {
                let i = a * dim + b;
                let dx = x[a] - x[b];
                let gain = 1.0 - kdt * dx * dx + innovation * (x[a] + x[b] - 2.0 * expectation);
                self.work[i] = self.rho[i] * gain + self.work[i] * minus_i_dt;
            }
        }
        let mut trace = 0.0;
        for a in 0..dim {
            for b in a..dim {
                let avg = (self.work[a * dim + b] + self.work[b * dim + a].conj()) * 0.5;
                self.rho[a * dim + b] = avg;
                self.rho[b * dim + a] = avg.conj();
            }
            trace += self.rho[a * dim + a].re;
        }
        self.steps += 1;
        if !trace.is_finite() || self.rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite { step: self.steps });
        }
        let inv = 1.0 / trace;
        self.rho.iter_mut().for_each(|z| *z *= inv);
        Ok(())
    }
}
