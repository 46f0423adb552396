//! Physical and numerical parameters of a dual-chain transfer run.
//!
//! Rates are in units of the exchange coupling `J` and times in units of
//! `1/J`, with `ħ = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which spins the uniform `z` field acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldConvention {
    /// Field on all `N` spins of each chain; a constant on the transfer sector.
    #[default]
    AllSites,
    /// Field on spins `1..N-1` only, leaving the receiver spins unbiased.
    ExcludeReceiver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Spins per chain (`N`).
    pub n_sites: usize,
    /// Exchange coupling `J`.
    pub coupling: f64,
    /// Uniform field `B`.
    pub field: f64,
    #[serde(default)]
    pub field_convention: FieldConvention,
    /// Measurement strength `k`.
    pub meas_strength: f64,
    /// Detector efficiency `η`.
    pub efficiency: f64,
    pub dt: f64,
    /// Arrival is declared once the receiver overlap reaches this value.
    pub fidelity_threshold: f64,
    /// Censoring horizon.
    pub t_max: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_sites: 10,
            coupling: 1.0,
            field: 0.0,
            field_convention: FieldConvention::AllSites,
            meas_strength: 2.0,
            efficiency: 1.0,
            dt: 1e-4,
            fidelity_threshold: 0.99,
            t_max: 2000.0,
        }
    }
}

impl ChainConfig {
    /// A configuration with the reference numerical settings (`J = 1`,
    /// `B = 0`, `η = 1`, `dt = 1e-4`, `t_max = 2000`).
    pub fn new(n_sites: usize, meas_strength: f64, fidelity_threshold: f64) -> Self {
        Self {
            n_sites,
            meas_strength,
            fidelity_threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 2 {
            return Err(Error::config("n_sites", format!("must be at least 2, got {}", self.n_sites)));
        }
        if !self.coupling.is_finite() {
            return Err(Error::config("coupling", "must be finite"));
        }
        if !self.field.is_finite() {
            return Err(Error::config("field", "must be finite"));
        }
        if !(self.meas_strength.is_finite() && self.meas_strength >= 0.0) {
            return Err(Error::config(
                "meas_strength",
                format!("must be a nonnegative finite number, got {}", self.meas_strength),
            ));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::config(
                "efficiency",
                format!("must lie in (0, 1], got {}", self.efficiency),
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.fidelity_threshold > 0.0 && self.fidelity_threshold < 1.0) {
            return Err(Error::config(
                "fidelity_threshold",
                format!("must lie in (0, 1), got {}", self.fidelity_threshold),
            ));
        }
        if !(self.t_max.is_finite() && self.t_max > self.dt) {
            return Err(Error::config(
                "t_max",
                format!("must be finite and exceed dt, got {}", self.t_max),
            ));
        }
        Ok(())
    }

    /// Number of integrator steps that fit within the censoring horizon.
    pub fn max_steps(&self) -> u64 {
        // The relative slack absorbs rounding in t_max/dt for exact multiples.
        (self.t_max / self.dt * (1.0 + 1e-12)).floor() as u64
    }
}
