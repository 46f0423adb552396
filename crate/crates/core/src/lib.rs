//! Monte Carlo quantum-trajectory simulation of quantum-state transfer
//! through a dual Heisenberg spin chain whose receiver continuously monitors
//! the parity of its end node.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: the effective `N`-site model and the full Hilbert-space
//!   oracle it is checked against;
//! - [`sme`]: the stochastic master equation integrator and the averaged
//!   (Lindblad) evolution;
//! - [`protocol`]: single transfer attempts, continuous and projective;
//! - [`ensemble`]: reproducible parallel trajectory ensembles;
//! - [`stats`]: histograms, means, tails and remaining-time curves;
//! - [`checks`]: the oracle suite behind `dualchain check`;
//! - [`cli`]: the `dualchain` command-line driver.
//!
//! Runnable walkthroughs of each capability live in the crate's
//! `examples/` directory.

pub mod checks;
pub mod cli;
pub mod config;
pub mod density;
pub mod ensemble;
pub mod error;
pub mod format;
pub mod full_space;
mod kernel;
pub mod model;
pub mod protocol;
pub mod sme;
pub mod stats;

pub use config::{ChainConfig, FieldConvention};
pub use density::DensityMatrix;
pub use ensemble::{derive_seed, run_ensemble, RunPlan, RunResult, TrajectorySeed, Workers};
pub use error::{Error, Result};
pub use model::{build_effective_model, build_full_model, initial_state, CodedQubit, EffectiveModel, FullModel};
pub use protocol::{
    greedy_schedule, run_projective_baseline, run_trajectory, BaselineOutcome, MeasurementSchedule,
    TrajectoryOutcome,
};
pub use sme::{lindblad_evolve, sme_step, NoiseStream, SmeIntegrator};
pub use stats::{histogram_log, remaining_time_curve, summarize, sweep_curve, ArrivalSample, EnsembleSummary};
