//! Oracle suite: each check compares the simulator against an independent
//! reference (brute-force full Hilbert space, the averaged master equation,
//! exact martingale and Born-rule statistics, refined Brownian paths,
//! symmetries). Statistical checks express their tolerance as a multiple of
//! the sampled standard error, so a smaller sample widens the band as
//! `1/√M` automatically.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ChainConfig;
use crate::density::DensityMatrix;
use crate::ensemble::{derive_seed, execute, RunControl, RunPlan, TrajectorySeed, Workers};
use crate::error::Result;
use crate::full_space::FullSpaceSme;
use crate::model::{build_effective_model, build_full_model, initial_state, restriction_deviation, CodedQubit, EffectiveModel};
use crate::protocol::run_trajectory;
use crate::sme::{lindblad_evolve, sample_state_ensemble, NoiseStream, SmeIntegrator};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }

    fn from_result(name: &'static str, r: Result<CheckReport>) -> Self {
        r.unwrap_or_else(|e| Self::new(name, false, format!("error: {e}")))
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct CheckSettings {
    /// Smaller samples (tolerances widen accordingly).
    pub quick: bool,
    pub seed: u64,
    pub workers: usize,
    /// Perturb the effective hopping before the restriction check
    /// (fault injection).
    #[doc(hidden)]
    pub corrupt_offdiag: bool,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            quick: false,
            seed: 1,
            workers: Workers::Auto.resolve(),
            corrupt_offdiag: false,
        }
    }
}

/// Runs every check in a fixed order.
pub fn run_all(settings: &CheckSettings) -> Vec<CheckReport> {
    let (seed, workers) = (settings.seed, settings.workers);
    let scale = |full: usize, quick: usize| if settings.quick { quick } else { full };
    vec![
        check_restriction(2..=5, 3, seed, settings.corrupt_offdiag),
        check_field_invariance(2..=5),
        check_coded_state_independence(seed),
        check_trace_hermiticity(seed),
        check_unraveling(scale(1000, 200), &[1.0, 5.0, 10.0], seed, workers),
        check_martingale(scale(1000, 200), seed, workers),
        check_born_rule(scale(2000, 400), 0.3, seed, workers),
        check_convergence_order(scale(800, 400), seed),
        check_j_sign_symmetry(seed),
        check_scheduling_invariance(seed, workers.max(2)),
    ]
}

fn random_qubit(rng: &mut ChaCha8Rng) -> CodedQubit {
    loop {
        let z: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let alpha = Complex64::new(z[0], z[1]);
        let beta = Complex64::new(z[2], z[3]);
        if alpha.norm_sqr() + beta.norm_sqr() > 1e-3 {
            return CodedQubit::new(alpha, beta).expect("nonzero amplitudes");
        }
    }
}

/// The full two-chain Hamiltonian restricted to the coded basis equals the
/// effective model up to a constant; the coded span is closed under `H` and
/// `X`; the coded basis is orthonormal.
pub fn check_restriction(
    sizes: std::ops::RangeInclusive<usize>,
    qubits_per_size: usize,
    seed: u64,
    corrupt_offdiag: bool,
) -> CheckReport {
    const NAME: &str = "full-space restriction";
    const TOL: f64 = 1e-12;
    CheckReport::from_result(NAME, (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut dev, mut closure, mut gram, mut parity) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut cases = 0;
        for n in sizes {
            let config = ChainConfig::new(n, 1.0, 0.9);
            let mut model = build_effective_model(&config)?;
            if corrupt_offdiag {
                model.offdiag[0] += 1e-3;
            }
            for _ in 0..qubits_per_size {
                let full = build_full_model(&config, random_qubit(&mut rng))?;
                dev = dev.max(restriction_deviation(&full.restricted_hamiltonian(), &model).1);
                closure = closure.max(full.closure_residual());
                let g = full.coded_gram();
                gram = gram.max((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).fold(0.0, |w, (i, j)| {
                    let want = if i == j { 1.0 } else { 0.0 };
                    f64::max(w, (g[(i, j)] - want).norm())
                }));
                let x = full.restricted_parity();
                for i in 0..n {
                    for j in 0..n {
                        let want = if i == j { model.parity[i] } else { 0.0 };
                        parity = parity.max((x[(i, j)] - want).norm());
                    }
                }
                cases += 1;
            }
        }
        let worst = dev.max(closure).max(gram).max(parity);
        Ok(CheckReport::new(
            NAME,
            worst <= TOL,
            format!(
                "{cases} cases; max deviation {dev:.2e}, closure {closure:.2e}, gram {gram:.2e}, parity {parity:.2e} (tol {TOL:.0e})"
            ),
        ))
    })())
}

/// With the field on every spin, the field term commutes with the coded
/// projector and acts as a constant on the coded span, so the effective
/// model and every trajectory are independent of `B`.
pub fn check_field_invariance(sizes: std::ops::RangeInclusive<usize>) -> CheckReport {
    const NAME: &str = "field invariance";
    CheckReport::from_result(NAME, (|| {
        let (mut comm, mut spread) = (0.0f64, 0.0f64);
        for n in sizes {
            let mut config = ChainConfig::new(n, 1.0, 0.9);
            config.field = 0.7;
            let full = build_full_model(&config, CodedQubit::plus())?;
            comm = comm.max(full.field_commutator_norm());
            spread = spread.max(full.restricted_field_spread());
        }
        let mut a = ChainConfig::new(10, 2.0, 0.9);
        a.t_max = 5.0;
        let mut b = a.clone();
        b.field = 3.1;
        let seed = TrajectorySeed::new(17, 23);
        let ra = run_trajectory(&a, &build_effective_model(&a)?, seed)?;
        let rb = run_trajectory(&b, &build_effective_model(&b)?, seed)?;
        let same = ra == rb && build_effective_model(&a)? == build_effective_model(&b)?;
        Ok(CheckReport::new(
            NAME,
            comm <= 1e-12 && spread <= 1e-12 && same,
            format!("‖[B,P]‖ {comm:.2e}, on-span spread {spread:.2e}, trajectories identical: {same}"),
        ))
    })())
}

/// A density-matrix SME run in the full `4^N` space with the same noise
/// reproduces the effective fidelity trace for several encoded states.
pub fn check_coded_state_independence(seed: u64) -> CheckReport {
    const NAME: &str = "coded-state independence";
    const TOL: f64 = 1e-6;
    CheckReport::from_result(NAME, (|| {
        let mut config = ChainConfig::new(3, 1.5, 0.9);
        config.dt = 1e-3;
        let model = build_effective_model(&config)?;
        let qubits = [
            CodedQubit::zero(),
            CodedQubit::one(),
            CodedQubit::plus(),
            random_qubit(&mut ChaCha8Rng::seed_from_u64(seed)),
        ];
        let mut worst = 0.0f64;
        for qubit in qubits {
            let full = build_full_model(&config, qubit)?;
            let mut fs = FullSpaceSme::new(&full, &config);
            let mut integrator = SmeIntegrator::new(&model, &config);
            let mut rho = initial_state(&model);
            let mut noise = NoiseStream::new(derive_seed(seed, 3, 0), config.dt);
            for _ in 0..2000 {
                let dw = noise.draw();
                fs.step(dw)?;
                integrator.step(&mut rho, dw)?;
                worst = worst
                    .max((fs.coded_receiver_overlap() - rho.fidelity()).abs())
                    .max((fs.odd_parity_weight() - rho.fidelity()).abs());
            }
        }
        Ok(CheckReport::new(
            NAME,
            worst <= TOL,
            format!("4 encodings, 2000 steps; max |Δρ_NN| {worst:.2e} (tol {TOL:.0e})"),
        ))
    })())
}

/// Unit trace and exact Hermiticity after every step.
pub fn check_trace_hermiticity(seed: u64) -> CheckReport {
    const NAME: &str = "trace and Hermiticity";
    const TOL: f64 = 1e-12;
    CheckReport::from_result(NAME, (|| {
        let config = ChainConfig::new(10, 2.0, 0.99);
        let model = build_effective_model(&config)?;
        let mut integrator = SmeIntegrator::new(&model, &config);
        let mut rho = initial_state(&model);
        let mut noise = NoiseStream::new(derive_seed(seed, 4, 0), config.dt);
        let (mut trace, mut herm) = (0.0f64, 0.0f64);
        for _ in 0..20_000 {
            integrator.step(&mut rho, noise.draw())?;
            let tr = rho.trace();
            trace = trace.max((tr - 1.0).norm());
            herm = herm.max(rho.hermiticity_defect());
        }
        Ok(CheckReport::new(
            NAME,
            trace <= TOL && herm <= TOL,
            format!("20000 steps; max |tr−1| {trace:.2e}, Hermiticity defect {herm:.2e} (tol {TOL:.0e})"),
        ))
    })())
}

fn seeds(master: u64, cell: u64, m: usize) -> Vec<TrajectorySeed> {
    (0..m as u64).map(|i| derive_seed(master, cell, i)).collect()
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Distance between the trajectory average and the averaged master equation,
/// and its standard error, at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnravelingPoint {
    pub t: f64,
    /// Distance from the trajectory average to the Lindblad solution.
    pub distance: f64,
    pub standard_error: f64,
    /// Distance from the trajectory average to the explicit-Euler solution
    /// of the averaged equation at the trajectory step, the exact mean of the
    /// discretized scheme.
    pub euler_distance: f64,
}

/// Trajectory average versus the averaged master equation at `N = 10`,
/// `k = 2`: the Frobenius distance must stay within four standard errors,
/// where the standard error is `√(Σ_ij Var ρ_ij / M)`.
pub fn unraveling_points(m: usize, times: &[f64], seed: u64, workers: usize) -> Result<Vec<UnravelingPoint>> {
    let config = ChainConfig::new(10, 2.0, 0.99);
    let model = build_effective_model(&config)?;
    let rho0 = initial_state(&model);
    let samples = sample_state_ensemble(&rho0, &model, &config, &seeds(seed, 5, m), times, workers)?;
    let n = model.n();
    let mut points = Vec::with_capacity(times.len());
    let mut reference = rho0.clone();
    let mut euler = rho0.to_dense();
    let mut now = 0.0;
    for (ti, &t) in times.iter().enumerate() {
        reference = lindblad_evolve(&reference, &model, &config, t - now)?;
        let steps = ((t - now) / config.dt).round() as u64;
        euler = euler_average(&euler, &model, config.meas_strength, config.dt, steps);
        now = t;
        let mut mean = DensityMatrix::zeros(n);
        for traj in &samples {
            mean.add_scaled(&traj[ti], 1.0 / m as f64);
        }
        let mut variance = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mu = mean.get(i, j);
                let ss: f64 = samples.iter().map(|traj| (traj[ti].get(i, j) - mu).norm_sqr()).sum();
                variance += ss / (m as f64 - 1.0);
            }
        }
        points.push(UnravelingPoint {
            t,
            distance: mean.frobenius_distance(&reference),
            standard_error: (variance / m as f64).sqrt(),
            euler_distance: mean.frobenius_distance(&DensityMatrix::from_dense(&euler)),
        });
    }
    Ok(points)
}

/// Explicit Euler for `dρ/dt = −i[H, ρ] − k[X, [X, ρ]]`. Because the
/// innovation has zero mean and the scheme preserves the trace exactly, this
/// is what the trajectory average converges to at fixed `dt`.
fn euler_average(rho: &DMatrix<Complex64>, model: &EffectiveModel, k: f64, dt: f64, steps: u64) -> DMatrix<Complex64> {
    let h = model.hamiltonian().map(|v| Complex64::new(v, 0.0));
    let x = &model.parity;
    let mut rho = rho.clone();
    for _ in 0..steps {
        let comm = &h * &rho - &rho * &h;
        let mut next = &rho - comm * Complex64::new(0.0, dt);
        for ((i, j), z) in next.iter_mut().enumerate().map(|(idx, z)| ((idx % x.len(), idx / x.len()), z)) {
            let dx = x[i] - x[j];
            *z -= rho[(i, j)] * (k * dt * dx * dx);
        }
        rho = next;
    }
    rho
}

pub fn check_unraveling(m: usize, times: &[f64], seed: u64, workers: usize) -> CheckReport {
    const NAME: &str = "unraveling consistency";
    CheckReport::from_result(NAME, (|| {
        let points = unraveling_points(m, times, seed, workers)?;
        let passed = points.iter().all(|p| p.distance <= 4.0 * p.standard_error);
        let detail = points
            .iter()
            .map(|p| {
                format!(
                    "t={}: {:.3e} vs 4×{:.3e} (to same-dt Euler mean {:.3e})",
                    p.t, p.distance, p.standard_error, p.euler_distance
                )
            })
            .collect::<Vec<_>>()
            .join(", ");
        Ok(CheckReport::new(NAME, passed, format!("M={m}; {detail}")))
    })())
}

/// With `H = 0` the innovation has zero mean, so `E⟨X⟩(t) = ⟨X⟩(0)`.
pub fn check_martingale(m: usize, seed: u64, workers: usize) -> CheckReport {
    const NAME: &str = "parity martingale";
    CheckReport::from_result(NAME, (|| {
        let mut config = ChainConfig::new(4, 1.0, 0.99);
        config.coupling = 0.0;
        config.dt = 1e-3;
        let model = build_effective_model(&config)?;
        let amplitudes = [Complex64::new(0.5, 0.0); 4];
        let rho0 = DensityMatrix::from_pure(&amplitudes);
        let x0 = model.expect_parity(&rho0);
        let times = [0.1, 0.5, 1.0, 2.0];
        let samples = sample_state_ensemble(&rho0, &model, &config, &seeds(seed, 6, m), &times, workers)?;
        let mut passed = true;
        let mut parts = Vec::new();
        for (ti, t) in times.iter().enumerate() {
            let xs: Vec<f64> = samples.iter().map(|traj| model.expect_parity(&traj[ti])).collect();
            let (mean, se) = mean_and_se(&xs);
            passed &= (mean - x0).abs() <= 4.0 * se;
            parts.push(format!("t={t}: {mean:.4}±{se:.4}"));
        }
        Ok(CheckReport::new(NAME, passed, format!("M={m}, ⟨X⟩(0)={x0}; {}", parts.join(", "))))
    })())
}

/// With `H = 0`, starting from `diag(p, 0, …, 0, 1−p)`, the fraction of
/// trajectories collapsing onto the receiver equals `1 − p`.
pub fn check_born_rule(m: usize, p: f64, seed: u64, workers: usize) -> CheckReport {
    const NAME: &str = "Born-rule collapse";
    CheckReport::from_result(NAME, (|| {
        let mut config = ChainConfig::new(4, 1.0, 0.99);
        config.coupling = 0.0;
        config.dt = 1e-3;
        let model = build_effective_model(&config)?;
        let rho0 = DensityMatrix::from_diagonal(&[p, 0.0, 0.0, 1.0 - p]);
        // Twenty decoherence times 1/(4k).
        let t = 20.0 / (4.0 * config.meas_strength);
        let samples = sample_state_ensemble(&rho0, &model, &config, &seeds(seed, 7, m), &[t], workers)?;
        let hits = samples.iter().filter(|traj| traj[0].fidelity() > 0.99).count();
        let fraction = hits as f64 / m as f64;
        let band = 4.0 * (p * (1.0 - p) / m as f64).sqrt();
        Ok(CheckReport::new(
            NAME,
            (fraction - (1.0 - p)).abs() <= band,
            format!("M={m}: fraction {fraction:.4}, expected {:.4} ± {band:.4}", 1.0 - p),
        ))
    })())
}

/// Strong errors of the Euler scheme at `dt0, dt0/2, dt0/4, dt0/8` against a
/// `dt0/64` solution on the same Brownian paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    /// Geometric mean of `errors[i] / errors[i+1]`.
    pub mean_ratio: f64,
}

/// Coarse-to-fine parameters of the strong-convergence study.
pub const CONVERGENCE_BASE_DT: f64 = 1e-3;
pub const CONVERGENCE_HORIZON: f64 = 1.0;

pub fn convergence_study(paths: usize, seed: u64) -> Result<ConvergenceStudy> {
    const REFINE: usize = 64;
    // A two-site chain with weak hopping: the multiplicative noise term
    // dominates the error, so the strong order-½ rate is visible. Where the
    // coherent drift dominates, Euler's error behaves as order 1.
    let mut config = ChainConfig::new(2, 1.0, 0.99);
    config.coupling = 0.3;
    let model = build_effective_model(&config)?;
    let fine_steps = (CONVERGENCE_HORIZON / CONVERGENCE_BASE_DT).round() as usize * REFINE;
    let fine_dt = CONVERGENCE_BASE_DT / REFINE as f64;
    let levels = [1usize, 2, 4, 8];
    let mut errors = vec![0.0; levels.len()];

    let terminal = |increments: &[f64], dt: f64| -> Result<DensityMatrix> {
        let mut c = config.clone();
        c.dt = dt;
        let mut integrator = SmeIntegrator::new(&model, &c);
        let mut rho = initial_state(&model);
        for &dw in increments {
            integrator.step(&mut rho, dw)?;
        }
        Ok(rho)
    };

    for path in 0..paths {
        let mut noise = NoiseStream::new(derive_seed(seed, 8, path as u64), fine_dt);
        let fine: Vec<f64> = (0..fine_steps).map(|_| noise.draw()).collect();
        let reference = terminal(&fine, fine_dt)?;
        for (e, &level) in errors.iter_mut().zip(&levels) {
            let group = REFINE / level;
            let coarse: Vec<f64> = fine.chunks(group).map(|c| c.iter().sum()).collect();
            let rho = terminal(&coarse, fine_dt * group as f64)?;
            *e += rho.frobenius_distance(&reference) / paths as f64;
        }
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let mean_ratio = ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64;
    Ok(ConvergenceStudy {
        steps: levels.iter().map(|l| CONVERGENCE_BASE_DT / *l as f64).collect(),
        errors,
        mean_ratio: mean_ratio.exp(),
    })
}

pub fn check_convergence_order(paths: usize, seed: u64) -> CheckReport {
    const NAME: &str = "strong convergence order";
    CheckReport::from_result(NAME, (|| {
        let study = convergence_study(paths, seed)?;
        let errors: Vec<String> = study.errors.iter().map(|e| format!("{e:.3e}")).collect();
        Ok(CheckReport::new(
            NAME,
            (1.2..=1.7).contains(&study.mean_ratio),
            format!(
                "{paths} paths; errors [{}]; mean halving ratio {:.3} (order ½ gives √2; band [1.2, 1.7])",
                errors.join(", "),
                study.mean_ratio
            ),
        ))
    })())
}

/// `J → −J` maps every state to its complex conjugate, exactly: `ρ_NN(t)`
/// and the arrival outcome agree to the bit.
pub fn check_j_sign_symmetry(seed: u64) -> CheckReport {
    const NAME: &str = "J-sign symmetry";
    CheckReport::from_result(NAME, (|| {
        let mut plus = ChainConfig::new(10, 2.0, 0.9);
        plus.t_max = 20.0;
        let mut minus = plus.clone();
        minus.coupling = -1.0;
        let (mp, mm) = (build_effective_model(&plus)?, build_effective_model(&minus)?);
        let (mut ip, mut im) = (SmeIntegrator::new(&mp, &plus), SmeIntegrator::new(&mm, &minus));
        let (mut rp, mut rm) = (initial_state(&mp), initial_state(&mm));
        let mut noise = NoiseStream::new(derive_seed(seed, 9, 0), plus.dt);
        let mut mismatches = 0u64;
        for _ in 0..50_000 {
            let dw = noise.draw();
            ip.step(&mut rp, dw)?;
            im.step(&mut rm, dw)?;
            for i in 0..10 {
                for j in 0..10 {
                    let (a, b) = (rp.get(i, j), rm.get(i, j));
                    if a.re != b.re || a.im != -b.im {
                        mismatches += 1;
                    }
                }
            }
        }
        let seeds = [derive_seed(seed, 9, 1), derive_seed(seed, 9, 2)];
        let mut outcomes_equal = true;
        for s in seeds {
            outcomes_equal &= run_trajectory(&plus, &mp, s)? == run_trajectory(&minus, &mm, s)?;
        }
        Ok(CheckReport::new(
            NAME,
            mismatches == 0 && outcomes_equal,
            format!("50000 steps: {mismatches} entries differ from the conjugate; outcomes identical: {outcomes_equal}"),
        ))
    })())
}

/// The same plan with one worker and with `workers` workers serializes to
/// identical bytes.
pub fn check_scheduling_invariance(seed: u64, workers: usize) -> CheckReport {
    const NAME: &str = "scheduling invariance";
    CheckReport::from_result(NAME, (|| {
        let mut base = ChainConfig::new(6, 1.0, 0.9);
        base.dt = 1e-3;
        base.t_max = 30.0;
        let mut plan = RunPlan::new(base, vec![1.0, 3.0], vec![0.9, 0.99], 40, seed);
        plan.workers = Workers::Count(1);
        let one = execute(&plan, &RunControl::default())?;
        plan.workers = Workers::Count(workers);
        let many = execute(&plan, &RunControl::default())?;
        let same = one.canonical_bytes() == many.canonical_bytes();
        Ok(CheckReport::new(
            NAME,
            same,
            format!("{} outcomes, 1 vs {workers} workers byte-identical: {same}", one.outcome_count()),
        ))
    })())
}
