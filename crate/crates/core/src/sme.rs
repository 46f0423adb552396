//! Stochastic master equation for continuous parity monitoring of the
//! receiver node:
//!
//! ```text
//! dρ = −i[H, ρ] dt − k[X, [X, ρ]] dt + √(2ηk) (Xρ + ρX − 2⟨X⟩ρ) dW
//! dr = ⟨X⟩ dt + dW / √(8ηk)
//! ```
//!
//! integrated with the Euler–Maruyama scheme. After every step the state is
//! made exactly Hermitian and rescaled to unit trace.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::ChainConfig;
use crate::density::DensityMatrix;
use crate::ensemble::TrajectorySeed;
use crate::error::{Error, Result};
use crate::format::g9;
use crate::kernel::{step_single, Coefficients, LaneBlock, Measurement, BATCH};
use crate::model::EffectiveModel;

/// Steps between positivity spot checks in debug builds.
pub const POSITIVITY_CHECK_STRIDE: u64 = 10_000;

/// Smallest eigenvalue below which a positivity check reports a violation.
pub const POSITIVITY_FLOOR: f64 = -1e-4;

/// Gaussian Wiener increments `dW ~ Normal(0, dt)` from a per-trajectory
/// ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
}

impl NoiseStream {
    pub fn new(seed: TrajectorySeed, dt: f64) -> Self {
        Self {
            rng: ChaCha8Rng::from_seed(seed.to_bytes()),
            sqrt_dt: dt.sqrt(),
        }
    }

    #[inline]
    pub fn draw(&mut self) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.sqrt_dt * z
    }

    /// A standard normal variate, independent of the `dt` scaling.
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// Free-function form of [`NoiseStream::draw`].
pub fn draw_increment(noise: &mut NoiseStream) -> f64 {
    noise.draw()
}

/// Scalars produced by one integrator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// `⟨X⟩` before the step.
    pub expectation: f64,
    /// Measurement record increment `dr`.
    pub record_increment: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: DensityMatrix,
    pub record_increment: f64,
    pub expectation: f64,
}

/// Reusable Euler–Maruyama stepper for a fixed model and configuration.
///
/// Holds the Hamiltonian and parity in the padded layout used by
/// [`DensityMatrix`] plus one scratch buffer, so stepping never allocates.
#[derive(Debug, Clone)]
pub struct SmeIntegrator {
    coef: Coefficients,
    measurement: Measurement,
    record_gain: f64,
    scratch: DensityMatrix,
    steps: u64,
    positivity_stride: Option<u64>,
}

impl SmeIntegrator {
    pub fn new(model: &EffectiveModel, config: &ChainConfig) -> Self {
        let rate = 8.0 * config.efficiency * config.meas_strength;
        Self {
            coef: Coefficients::new(model, config.dt),
            measurement: Measurement::new(config.meas_strength, config.efficiency, config.dt),
            record_gain: 1.0 / rate.sqrt(),
            scratch: DensityMatrix::zeros(model.n()),
            steps: 0,
            positivity_stride: None,
        }
    }

    /// Checks the smallest eigenvalue every `stride` steps and fails with
    /// [`Error::Positivity`] when it is below [`POSITIVITY_FLOOR`]
    /// (`None`, the default, disables the check).
    pub fn with_positivity_check(mut self, stride: Option<u64>) -> Self {
        self.positivity_stride = stride;
        self
    }

    pub fn dt(&self) -> f64 {
        self.coef.dt
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    /// Advances `rho` by one step driven by the Wiener increment `dw`.
    ///
    /// Only the upper triangle is integrated; the lower triangle is written
    /// as its conjugate mirror, which is the `(ρ + ρ†)/2` symmetrization of
    /// an update that is Hermitian in exact arithmetic.
    pub fn step(&mut self, rho: &mut DensityMatrix, dw: f64) -> Result<StepRecord> {
        assert_eq!(rho.n(), self.coef.n, "state dimension does not match the model");
        let out = &mut self.scratch;
        let r = step_single(&self.coef, &rho.re, &rho.im, &mut out.re, &mut out.im, self.measurement, dw);
        self.steps += 1;
        if !r.finite[0] {
            return Err(Error::NonFinite { step: self.steps });
        }
        std::mem::swap(&mut rho.re, &mut out.re);
        std::mem::swap(&mut rho.im, &mut out.im);

        if let Some(stride) = self.positivity_stride {
            if self.steps % stride == 0 {
                let min_eigenvalue = rho.min_eigenvalue();
                if min_eigenvalue < POSITIVITY_FLOOR {
                    return Err(Error::Positivity {
                        step: self.steps,
                        min_eigenvalue,
                    });
                }
            }
        }

        let expectation = r.expectation[0];
        Ok(StepRecord {
            expectation,
            record_increment: expectation * self.coef.dt + dw * self.record_gain,
        })
    }
}

/// One Euler–Maruyama step of the SME from `state`.
///
/// With `k = 0` the record increment is not defined (the measurement carries
/// no signal) and is returned as the non-finite value of the formula.
pub fn sme_step(
    state: &DensityMatrix,
    model: &EffectiveModel,
    config: &ChainConfig,
    dw: f64,
) -> Result<StepOutput> {
    let mut integrator = SmeIntegrator::new(model, config).with_positivity_check(None);
    let mut next = state.clone();
    let rec = integrator.step(&mut next, dw)?;
    Ok(StepOutput {
        state: next,
        record_increment: rec.record_increment,
        expectation: rec.expectation,
    })
}

/// Ensemble-averaged (Lindblad) evolution
/// `dρ/dt = −i[H, ρ] − k[X, [X, ρ]]`, integrated with classical RK4 on
/// dense matrices using steps no longer than `config.dt`.
pub fn lindblad_evolve(
    state: &DensityMatrix,
    model: &EffectiveModel,
    config: &ChainConfig,
    t: f64,
) -> Result<DensityMatrix> {
    assert!(t >= 0.0, "evolution time must be nonnegative");
    let h = model.hamiltonian().map(|v| Complex64::new(v, 0.0));
    let x = model.parity_matrix().map(|v| Complex64::new(v, 0.0));
    let x2 = &x * &x;
    let k = Complex64::new(config.meas_strength, 0.0);
    let minus_i = Complex64::new(0.0, -1.0);
    let rhs = |rho: &DMatrix<Complex64>| -> DMatrix<Complex64> {
        let comm = &h * rho - rho * &h;
        let double = &x2 * rho - (&x * rho * &x) * Complex64::new(2.0, 0.0) + rho * &x2;
        comm * minus_i - double * k
    };

    let steps = (t / config.dt).ceil().max(if t > 0.0 { 1.0 } else { 0.0 }) as u64;
    let mut rho = state.to_dense();
    if steps > 0 {
        let h_step = Complex64::new(t / steps as f64, 0.0);
        let half = h_step * 0.5;
        let sixth = h_step / 6.0;
        for step in 0..steps {
            let k1 = rhs(&rho);
            let k2 = rhs(&(&rho + &k1 * half));
            let k3 = rhs(&(&rho + &k2 * half));
            let k4 = rhs(&(&rho + &k3 * h_step));
            rho += (k1 + (k2 + k3) * Complex64::new(2.0, 0.0) + k4) * sixth;
            if step % 1024 == 0 && rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::NonFinite { step: step + 1 });
            }
        }
    }
    if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite { step: steps });
    }
    Ok(DensityMatrix::from_dense(&rho))
}

/// A sampled point of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub rho_nn: f64,
    pub expect_x: f64,
    /// Record accumulated since the previous sample.
    pub dr: f64,
}

/// Writes `t,rho_NN,expect_X,dr` rows.
pub fn write_trace_csv<W: Write>(mut w: W, points: &[TracePoint]) -> std::io::Result<()> {
    writeln!(w, "t,rho_NN,expect_X,dr")?;
    for p in points {
        writeln!(w, "{},{},{},{}", g9(p.t), g9(p.rho_nn), g9(p.expect_x), g9(p.dr))?;
    }
    Ok(())
}

/// Integrates one trajectory from `rho0` without stopping, returning the
/// state at each requested time (rounded to the nearest step).
pub fn sample_states(
    rho0: &DensityMatrix,
    model: &EffectiveModel,
    config: &ChainConfig,
    seed: TrajectorySeed,
    times: &[f64],
) -> Result<Vec<DensityMatrix>> {
    let mut integrator = SmeIntegrator::new(model, config);
    let mut noise = NoiseStream::new(seed, config.dt);
    let mut rho = rho0.clone();
    let mut out = Vec::with_capacity(times.len());
    let mut done = 0u64;
    for &t in times {
        let target = (t / config.dt).round() as u64;
        assert!(target >= done, "sample times must be nondecreasing");
        while done < target {
            integrator.step(&mut rho, noise.draw())?;
            done += 1;
        }
        out.push(rho.clone());
    }
    Ok(out)
}

/// [`sample_states`] for many seeds at once: element `m` of the result is
/// exactly `sample_states(rho0, model, config, seeds[m], times)`. Seeds are
/// spread over `workers` threads and advanced in lane batches.
pub fn sample_state_ensemble(
    rho0: &DensityMatrix,
    model: &EffectiveModel,
    config: &ChainConfig,
    seeds: &[TrajectorySeed],
    times: &[f64],
    workers: usize,
) -> Result<Vec<Vec<DensityMatrix>>> {
    let targets: Vec<u64> = times.iter().map(|&t| (t / config.dt).round() as u64).collect();
    assert!(targets.windows(2).all(|w| w[0] <= w[1]), "sample times must be nondecreasing");
    let groups: Vec<&[TrajectorySeed]> = seeds.chunks(BATCH).collect();
    let cursor = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new(Vec::with_capacity(groups.len()));

    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let g = cursor.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(group) = groups.get(g) else { break };
                let r = sample_group(rho0, model, config, group, &targets);
                results.lock().expect("results poisoned").push((g, r));
            });
        }
    });
    let mut results = results.into_inner().expect("results poisoned");
    results.sort_by_key(|(g, _)| *g);
    let mut out = Vec::with_capacity(seeds.len());
    for (_, r) in results {
        out.extend(r?);
    }
    Ok(out)
}

fn sample_group(
    rho0: &DensityMatrix,
    model: &EffectiveModel,
    config: &ChainConfig,
    seeds: &[TrajectorySeed],
    targets: &[u64],
) -> Result<Vec<Vec<DensityMatrix>>> {
    let m = Measurement::new(config.meas_strength, config.efficiency, config.dt);
    let mut block = LaneBlock::new(Coefficients::new(model, config.dt));
    let mut noise: Vec<NoiseStream> = seeds.iter().map(|&s| NoiseStream::new(s, config.dt)).collect();
    for l in 0..seeds.len() {
        block.load_lane(l, &rho0.re, &rho0.im, m);
    }
    let mut out: Vec<Vec<DensityMatrix>> = seeds.iter().map(|_| Vec::with_capacity(targets.len())).collect();
    let mut done = 0u64;
    for &target in targets {
        while done < target {
            let mut dw = [0.0; BATCH];
            for (d, stream) in dw.iter_mut().zip(noise.iter_mut()) {
                *d = stream.draw();
            }
            let r = block.step(&dw);
            done += 1;
            if let Some(l) = (0..seeds.len()).find(|&l| !r.finite[l]) {
                return Err(Error::Trajectory {
                    seed: seeds[l],
                    source: Box::new(Error::NonFinite { step: done }),
                });
            }
        }
        for (l, states) in out.iter_mut().enumerate() {
            let mut rho = DensityMatrix::zeros(model.n());
            block.extract(l, &mut rho.re, &mut rho.im);
            states.push(rho);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::derive_seed;
    use crate::model::build_effective_model;

    fn two_site(k: f64) -> (EffectiveModel, ChainConfig) {
        let mut c = ChainConfig::new(2, k, 0.99);
        c.dt = 1e-3;
        (build_effective_model(&c).unwrap(), c)
    }

    fn dense_euler(rho: &DensityMatrix, m: &EffectiveModel, c: &ChainConfig, dw: f64) -> DMatrix<Complex64> {
        let r = rho.to_dense();
        let h = m.hamiltonian().map(|v| Complex64::new(v, 0.0));
        let x = m.parity_matrix().map(|v| Complex64::new(v, 0.0));
        let ex = (&x * &r).trace().re;
        let i = Complex64::new(0.0, 1.0);
        let k = c.meas_strength;
        let comm = &h * &r - &r * &h;
        let inner = &x * &r - &r * &x;
        let double = &x * &inner - &inner * &x;
        let innov = &x * &r + &r * &x - &r * Complex64::new(2.0 * ex, 0.0);
        let mut next = &r - comm * (i * c.dt) - double * Complex64::new(k * c.dt, 0.0)
            + innov * Complex64::new((2.0 * c.efficiency * k).sqrt() * dw, 0.0);
        let herm = (&next + next.adjoint()) * Complex64::new(0.5, 0.0);
        let tr = herm.trace().re;
        next = herm / Complex64::new(tr, 0.0);
        next
    }

    #[test]
    fn stencil_step_matches_dense_formula() {
        let mut c = ChainConfig::new(5, 1.3, 0.99);
        c.dt = 1e-3;
        c.efficiency = 0.7;
        let m = build_effective_model(&c).unwrap();
        let amps: Vec<Complex64> = (0..5).map(|i| Complex64::new(1.0 + i as f64, 0.5 * i as f64 - 1.0)).collect();
        let rho = DensityMatrix::from_pure(&amps);
        let out = sme_step(&rho, &m, &c, 0.013).unwrap();
        let expect = dense_euler(&rho, &m, &c, 0.013);
        let got = out.state.to_dense();
        assert!((got - expect).camax() < 1e-14);
    }

    #[test]
    fn unmeasured_step_is_unitary_euler() {
        let (m, c) = two_site(0.0);
        let rho = DensityMatrix::pure_site(2, 0);
        let out = sme_step(&rho, &m, &c, 0.0).unwrap();
        let h = m.hamiltonian().map(|v| Complex64::new(v, 0.0));
        let r = rho.to_dense();
        let i = Complex64::new(0.0, 1.0);
        let expect = &r - (&h * &r - &r * &h) * (i * c.dt);
        let tr = expect.trace();
        assert!((out.state.to_dense() - expect / tr).camax() < 1e-15);
    }

    #[test]
    fn parity_eigenstate_is_fixed_without_hamiltonian() {
        let (m, c) = two_site(1.0);
        let m0 = m.without_hamiltonian();
        let rho = DensityMatrix::pure_site(2, 1);
        for dw in [-0.3, 0.0, 0.05, 1.7] {
            let out = sme_step(&rho, &m0, &c, dw).unwrap();
            assert_eq!(out.state, rho);
            assert_eq!(out.expectation, -1.0);
        }
    }

    #[test]
    fn balanced_diagonal_state_moves_with_noise() {
        // N=2, H=0, η=1, k=1/2: √(2ηk)=1, ⟨X⟩=0, so ρ' = diag(0.5+dW, 0.5−dW).
        let (m, c) = two_site(0.5);
        let m0 = m.without_hamiltonian();
        let rho = DensityMatrix::from_diagonal(&[0.5, 0.5]);
        let dw = 0.01;
        let out = sme_step(&rho, &m0, &c, dw).unwrap();
        assert!((out.state.population(0) - 0.51).abs() < 1e-15);
        assert!((out.state.population(1) - 0.49).abs() < 1e-15);
        assert_eq!(out.expectation, 0.0);
        assert!((out.record_increment - dw / 2.0).abs() < 1e-15);
    }

    #[test]
    fn record_increment_uses_same_noise() {
        let (m, c) = two_site(2.0);
        let rho = DensityMatrix::from_diagonal(&[0.3, 0.7]);
        let dw = -0.02;
        let out = sme_step(&rho, &m, &c, dw).unwrap();
        let expect = (0.3 - 0.7) * c.dt + dw / (8.0f64 * 2.0).sqrt();
        assert!((out.record_increment - expect).abs() < 1e-16);
    }

    #[test]
    fn non_finite_increment_is_reported() {
        let (m, c) = two_site(1.0);
        let rho = DensityMatrix::from_diagonal(&[0.3, 0.7]);
        assert!(matches!(sme_step(&rho, &m, &c, f64::NAN), Err(Error::NonFinite { step: 1 })));
    }

    #[test]
    fn positivity_violation_aborts() {
        let (m, c) = two_site(1.0);
        let mut integ = SmeIntegrator::new(&m, &c).with_positivity_check(Some(1));
        let mut rho = DensityMatrix::from_diagonal(&[0.5, 0.5]);
        // A huge kick drives one population negative.
        let err = integ.step(&mut rho, 5.0).unwrap_err();
        assert!(matches!(err, Error::Positivity { .. }));
    }

    #[test]
    fn noise_stream_is_deterministic() {
        let seed = TrajectorySeed::new(7, 11);
        let mut a = NoiseStream::new(seed, 1e-4);
        let mut b = NoiseStream::new(seed, 1e-4);
        for _ in 0..1000 {
            assert_eq!(a.draw().to_bits(), b.draw().to_bits());
        }
    }

    #[test]
    fn noise_moments() {
        let dt = 1e-4;
        let mut s = NoiseStream::new(TrajectorySeed::new(1, 2), dt);
        let m = 1_000_000;
        let draws: Vec<f64> = (0..m).map(|_| draw_increment(&mut s)).collect();
        let mean = draws.iter().sum::<f64>() / m as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        assert!(mean.abs() < 3.0 * (dt / m as f64).sqrt(), "mean {mean}");
        assert!((var / dt - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn lindblad_keeps_diagonal_states_without_hamiltonian() {
        let (m, c) = two_site(1.0);
        let m0 = m.without_hamiltonian();
        let rho = DensityMatrix::from_diagonal(&[0.2, 0.8]);
        let out = lindblad_evolve(&rho, &m0, &c, 3.0).unwrap();
        assert!(out.frobenius_distance(&rho) < 1e-14);
    }

    #[test]
    fn lindblad_dephases_receiver_coherence() {
        let mut c = ChainConfig::new(3, 0.7, 0.99);
        c.dt = 1e-3;
        let m = build_effective_model(&c).unwrap().without_hamiltonian();
        let a = Complex64::new(1.0 / 3f64.sqrt(), 0.0);
        let rho = DensityMatrix::from_pure(&[a, a, a]);
        let t = 1.3;
        let out = lindblad_evolve(&rho, &m, &c, t).unwrap();
        let decay = (-4.0 * c.meas_strength * t).exp();
        assert!((out.get(0, 2).re - decay / 3.0).abs() < 1e-12);
        assert!((out.get(1, 2).re - decay / 3.0).abs() < 1e-12);
        // Coherence within the even block is untouched.
        assert!((out.get(0, 1).re - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lindblad_conserves_purity_without_measurement() {
        let mut c = ChainConfig::new(6, 0.0, 0.99);
        c.dt = 1e-3;
        let m = build_effective_model(&c).unwrap();
        let rho = crate::model::initial_state(&m);
        let out = lindblad_evolve(&rho, &m, &c, 1.0).unwrap();
        assert!((out.purity() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[TracePoint { t: 0.5, rho_nn: 0.25, expect_x: 0.5, dr: 0.001 }]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "t,rho_NN,expect_X,dr\n0.5,0.25,0.5,0.001\n");
    }

    #[test]
    fn ensemble_sampling_matches_single_trajectories() {
        let mut c = ChainConfig::new(4, 1.5, 0.9);
        c.dt = 1e-3;
        let m = build_effective_model(&c).unwrap();
        let rho0 = DensityMatrix::from_diagonal(&[0.4, 0.1, 0.2, 0.3]);
        let seeds: Vec<_> = (0..11).map(|i| derive_seed(5, 6, i)).collect();
        let times = [0.0, 0.05, 0.3];
        let all = sample_state_ensemble(&rho0, &m, &c, &seeds, &times, 3).unwrap();
        for (seed, got) in seeds.iter().zip(&all) {
            assert_eq!(got, &sample_states(&rho0, &m, &c, *seed, &times).unwrap());
        }
    }
}
