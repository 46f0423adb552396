//! Single transmission attempts.
//!
//! A continuous-measurement attempt integrates the SME from the sender
//! state and declares arrival the first time the receiver overlap `ρ_NN`
//! reaches the fidelity threshold. The projective baseline instead evolves
//! unitarily and performs instantaneous parity measurements at scheduled
//! times until one succeeds.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use std::sync::atomic::{AtomicBool, Ordering};

use crate::config::ChainConfig;
use crate::density::DensityMatrix;
use crate::ensemble::{derive_seed, TrajectorySeed};
use crate::error::{Error, Result};
use crate::kernel::{Coefficients, LaneBlock, Measurement, BATCH};
use crate::model::{initial_state, EffectiveModel};
use crate::sme::{NoiseStream, SmeIntegrator, TracePoint, POSITIVITY_CHECK_STRIDE, POSITIVITY_FLOOR};

/// Result of one continuous-measurement attempt for one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub index: u64,
    pub seed: TrajectorySeed,
    pub threshold: f64,
    /// First time `ρ_NN ≥ threshold`; `None` when censored at `t_max`.
    pub arrival_time: Option<f64>,
    pub steps_taken: u64,
    /// Largest `ρ_NN` seen up to arrival (or up to `t_max`).
    pub peak_fidelity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TracePoint>>,
}

impl TrajectoryOutcome {
    pub fn is_censored(&self) -> bool {
        self.arrival_time.is_none()
    }
}

impl Serialize for TracePoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.t, self.rho_nn, self.expect_x, self.dr].serialize(s)
    }
}

impl<'de> Deserialize<'de> for TracePoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [t, rho_nn, expect_x, dr] = <[f64; 4]>::deserialize(d)?;
        Ok(TracePoint { t, rho_nn, expect_x, dr })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrajectoryOptions {
    /// Record a [`TracePoint`] every this many steps.
    pub trace_stride: Option<u64>,
    /// Feed a non-finite increment on the first step (fault injection).
    #[doc(hidden)]
    pub poison: bool,
}

/// Runs one attempt for `config.fidelity_threshold`.
pub fn run_trajectory(
    config: &ChainConfig,
    model: &EffectiveModel,
    seed: TrajectorySeed,
) -> Result<TrajectoryOutcome> {
    let mut out = run_trajectory_multi(
        config,
        model,
        seed,
        0,
        &[config.fidelity_threshold],
        TrajectoryOptions::default(),
    )?;
    Ok(out.pop().expect("one threshold in, one outcome out"))
}

/// Runs one attempt and reports the arrival for every threshold on the same
/// noise realization. Integration continues until the largest threshold is
/// reached or `t_max` passes. Outcomes are returned in the order of
/// `thresholds`.
pub fn run_trajectory_multi(
    config: &ChainConfig,
    model: &EffectiveModel,
    seed: TrajectorySeed,
    index: u64,
    thresholds: &[f64],
    options: TrajectoryOptions,
) -> Result<Vec<TrajectoryOutcome>> {
    let job = TrajectoryJob {
        index,
        seed,
        poison: options.poison,
    };
    let mut integrator = SmeIntegrator::new(model, config);
    let mut rho = initial_state(model);
    let mut attempt = Attempt::new(job, config, thresholds, options.trace_stride, rho.fidelity(), model.expect_parity(&rho));
    loop {
        let mut dw = attempt.noise.draw();
        if job.poison && attempt.step == 0 {
            dw = f64::NAN;
        }
        let rec = integrator.step(&mut rho, dw).map_err(|e| attempt.wrap(e))?;
        attempt.monitor_positivity(|| rho.min_eigenvalue());
        if attempt.advance(rec.record_increment, rho.fidelity(), || model.expect_parity(&rho)) {
            return Ok(attempt.finish());
        }
    }
}

/// One trajectory of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajectoryJob {
    pub index: u64,
    pub seed: TrajectorySeed,
    /// Start from a non-finite state (fault injection).
    #[doc(hidden)]
    pub poison: bool,
}

/// Runs many attempts of one configuration, several at a time in lockstep.
///
/// Each result equals, bit for bit, what [`run_trajectory_multi`] returns
/// for the same job; batching only changes speed. Results are in job order.
pub fn run_trajectory_batch(
    config: &ChainConfig,
    model: &EffectiveModel,
    thresholds: &[f64],
    jobs: &[TrajectoryJob],
    trace_stride: Option<u64>,
) -> Vec<Result<Vec<TrajectoryOutcome>>> {
    let mut results: Vec<Option<Result<Vec<TrajectoryOutcome>>>> = jobs.iter().map(|_| None).collect();
    let mut pending = jobs.iter().enumerate();
    run_lanes(
        model,
        config,
        thresholds,
        trace_stride,
        || pending.next().map(|(slot, &job)| (slot, job, config.meas_strength)),
        |slot, result| results[slot] = Some(result),
        || false,
    );
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Lane-batched driver. `next_job` yields `(slot, job, k)`; jobs may use
/// different measurement strengths, everything else comes from `config`.
/// Each finished job is passed to `finished`. When `stop` returns true no
/// new jobs are started and unfinished ones are dropped.
pub(crate) fn run_lanes(
    model: &EffectiveModel,
    config: &ChainConfig,
    thresholds: &[f64],
    trace_stride: Option<u64>,
    mut next_job: impl FnMut() -> Option<(usize, TrajectoryJob, f64)>,
    mut finished: impl FnMut(usize, Result<Vec<TrajectoryOutcome>>),
    stop: impl Fn() -> bool,
) {
    const STOP_POLL: u64 = 4096;
    let mut block = LaneBlock::new(Coefficients::new(model, config.dt));
    let mut lanes: [Option<(usize, f64, Attempt)>; BATCH] = std::array::from_fn(|_| None);
    let mut scratch = DensityMatrix::zeros(model.n());
    let mut exhausted = false;
    let mut tick = 0u64;

    loop {
        if !exhausted {
            for (l, lane) in lanes.iter_mut().enumerate() {
                if lane.is_some() {
                    continue;
                }
                let Some((slot, job, k)) = next_job() else {
                    exhausted = true;
                    break;
                };
                let mut lane_config = config.clone();
                lane_config.meas_strength = k;
                block.reset_lane(l, Measurement::new(k, config.efficiency, config.dt));
                if job.poison {
                    block.poison_lane(l);
                }
                let record_gain = 1.0 / (8.0 * config.efficiency * k).sqrt();
                *lane = Some((slot, record_gain, Attempt::new(job, &lane_config, thresholds, trace_stride, 0.0, 1.0)));
            }
        }
        if lanes.iter().all(Option::is_none) {
            return;
        }
        tick += 1;
        if tick % STOP_POLL == 0 && stop() {
            return;
        }
        let mut dw = [0.0; BATCH];
        for (l, lane) in lanes.iter_mut().enumerate() {
            if let Some((_, _, attempt)) = lane {
                dw[l] = attempt.noise.draw();
            }
        }
        let step = block.step(&dw);
        for (l, lane) in lanes.iter_mut().enumerate() {
            let Some((slot, record_gain, attempt)) = lane else { continue };
            let result = if !step.finite[l] {
                let e = Error::NonFinite { step: attempt.step + 1 };
                Some(Err(attempt.wrap(e)))
            } else {
                attempt.monitor_positivity(|| {
                    block.extract(l, &mut scratch.re, &mut scratch.im);
                    scratch.min_eigenvalue()
                });
                let record_increment = step.expectation[l] * config.dt + dw[l] * *record_gain;
                let over = attempt.advance(record_increment, block.fidelity(l), || block.expect_parity(l));
                over.then(|| Ok(std::mem::replace(attempt, Attempt::placeholder()).finish()))
            };
            if let Some(result) = result {
                finished(*slot, result);
                *lane = None;
                block.reset_lane(l, Measurement::new(0.0, 1.0, config.dt));
            }
        }
    }
}

static POSITIVITY_WARNED: AtomicBool = AtomicBool::new(false);

/// Bookkeeping of one attempt: noise, threshold crossings, optional trace.
struct Attempt {
    job: TrajectoryJob,
    noise: NoiseStream,
    dt: f64,
    max_steps: u64,
    thresholds: Vec<f64>,
    // Indices of `thresholds` in ascending order; `order[next]` is the next
    // one to cross.
    order: Vec<usize>,
    next: usize,
    arrivals: Vec<Option<(f64, u64, f64)>>,
    peak: f64,
    step: u64,
    trace_stride: Option<u64>,
    trace: Option<Vec<TracePoint>>,
    record: f64,
}

impl Attempt {
    fn new(
        job: TrajectoryJob,
        config: &ChainConfig,
        thresholds: &[f64],
        trace_stride: Option<u64>,
        fidelity: f64,
        expect_x: f64,
    ) -> Self {
        assert!(!thresholds.is_empty(), "at least one threshold is required");
        let mut order: Vec<usize> = (0..thresholds.len()).collect();
        order.sort_by(|&a, &b| thresholds[a].total_cmp(&thresholds[b]));
        Self {
            job,
            noise: NoiseStream::new(job.seed, config.dt),
            dt: config.dt,
            max_steps: config.max_steps(),
            thresholds: thresholds.to_vec(),
            order,
            next: 0,
            arrivals: vec![None; thresholds.len()],
            peak: fidelity,
            step: 0,
            trace_stride,
            trace: trace_stride.map(|_| {
                vec![TracePoint {
                    t: 0.0,
                    rho_nn: fidelity,
                    expect_x,
                    dr: 0.0,
                }]
            }),
            record: 0.0,
        }
    }

    fn placeholder() -> Self {
        let job = TrajectoryJob {
            index: 0,
            seed: TrajectorySeed::new(0, 0),
            poison: false,
        };
        Self {
            job,
            noise: NoiseStream::new(job.seed, 1.0),
            dt: 1.0,
            max_steps: 0,
            thresholds: Vec::new(),
            order: Vec::new(),
            next: 0,
            arrivals: Vec::new(),
            peak: 0.0,
            step: 0,
            trace_stride: None,
            trace: None,
            record: 0.0,
        }
    }

    fn wrap(&self, e: Error) -> Error {
        Error::Trajectory {
            seed: self.job.seed,
            source: Box::new(e),
        }
    }

    /// Debug builds spot-check positivity of the state after step
    /// `self.step + 1`. The Euler scheme does not preserve positivity, so a
    /// violation is reported once per process and the run continues.
    fn monitor_positivity(&self, min_eigenvalue: impl FnOnce() -> f64) {
        if cfg!(debug_assertions) && (self.step + 1) % POSITIVITY_CHECK_STRIDE == 0 {
            let lambda = min_eigenvalue();
            if lambda < POSITIVITY_FLOOR && !POSITIVITY_WARNED.swap(true, Ordering::Relaxed) {
                log::warn!(
                    "state lost positivity at step {} of trajectory {} (smallest eigenvalue {lambda:.3e}); \
                     reduce dt for a more faithful integration",
                    self.step + 1,
                    self.job.seed
                );
            }
        }
    }

    /// Accounts for one completed step; returns true when the attempt is
    /// over (every threshold crossed or `t_max` reached).
    fn advance(&mut self, record_increment: f64, fidelity: f64, expect_x: impl FnOnce() -> f64) -> bool {
        self.step += 1;
        let step = self.step;
        self.peak = self.peak.max(fidelity);
        while self.next < self.order.len() && fidelity >= self.thresholds[self.order[self.next]] {
            self.arrivals[self.order[self.next]] = Some((step as f64 * self.dt, step, self.peak));
            self.next += 1;
        }
        let all_crossed = self.next == self.order.len();
        if let (Some(points), Some(stride)) = (self.trace.as_mut(), self.trace_stride) {
            self.record += record_increment;
            if step % stride == 0 || all_crossed {
                points.push(TracePoint {
                    t: step as f64 * self.dt,
                    rho_nn: fidelity,
                    expect_x: expect_x(),
                    dr: self.record,
                });
                self.record = 0.0;
            }
        }
        all_crossed || step >= self.max_steps
    }

    fn finish(self) -> Vec<TrajectoryOutcome> {
        let Attempt {
            job,
            thresholds,
            arrivals,
            step,
            peak,
            trace,
            ..
        } = self;
        thresholds
            .iter()
            .zip(arrivals)
            .map(|(&threshold, arrival)| {
                let (arrival_time, steps_taken, peak_fidelity) = match arrival {
                    Some((t, s, p)) => (Some(t), s, p),
                    None => (None, step, peak),
                };
                TrajectoryOutcome {
                    index: job.index,
                    seed: job.seed,
                    threshold,
                    arrival_time,
                    steps_taken,
                    peak_fidelity,
                    trace: trace.clone(),
                }
            })
            .collect()
    }
}

/// Exact unitary propagation `e^{−iht}` through the eigenbasis of the
/// effective Hamiltonian.
#[derive(Debug, Clone)]
pub struct UnitaryPropagator {
    energies: Vec<f64>,
    modes: DMatrix<f64>,
}

impl UnitaryPropagator {
    pub fn new(model: &EffectiveModel) -> Self {
        let eig = SymmetricEigen::new(model.hamiltonian());
        Self {
            energies: eig.eigenvalues.iter().copied().collect(),
            modes: eig.eigenvectors,
        }
    }

    /// Components of `amplitudes` along each eigenmode.
    pub fn decompose(&self, amplitudes: &[Complex64]) -> Vec<Complex64> {
        let n = self.energies.len();
        (0..n)
            .map(|m| (0..n).map(|i| amplitudes[i] * self.modes[(i, m)]).sum())
            .collect()
    }

    pub fn evolve(&self, amplitudes: &[Complex64], t: f64) -> Vec<Complex64> {
        let coeffs = self.decompose(amplitudes);
        let n = self.energies.len();
        let phased: Vec<Complex64> = coeffs
            .iter()
            .zip(&self.energies)
            .map(|(c, e)| c * Complex64::from_polar(1.0, -e * t))
            .collect();
        (0..n)
            .map(|i| (0..n).map(|m| phased[m] * self.modes[(i, m)]).sum())
            .collect()
    }

    /// `|⟨N|e^{−iht}|ψ⟩|²` for a pre-decomposed state.
    fn receiver_population(&self, coeffs: &[Complex64], t: f64) -> f64 {
        let last = self.energies.len() - 1;
        coeffs
            .iter()
            .zip(&self.energies)
            .enumerate()
            .map(|(m, (c, e))| c * Complex64::from_polar(self.modes[(last, m)], -e * t))
            .sum::<Complex64>()
            .norm_sqr()
    }
}

/// Strictly increasing instants at which the receiver measures parity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSchedule {
    pub times: Vec<f64>,
    /// Set when a rule produced no measurement at all.
    pub empty_warning: bool,
}

impl MeasurementSchedule {
    pub fn explicit(times: Vec<f64>, t_max: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidSchedule("no measurement times".into()));
        }
        if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidSchedule(format!("time {t} is not positive")));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSchedule(format!(
                "times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some(t) = times.iter().find(|t| **t > t_max) {
            return Err(Error::InvalidSchedule(format!("time {t} exceeds t_max = {t_max}")));
        }
        Ok(Self {
            times,
            empty_warning: false,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Grid spacing of the local-maximum scan in [`greedy_schedule`].
pub const GREEDY_SCAN_STEP: f64 = 1e-3;

/// Measures at each local maximum of the receiver population that exceeds
/// `floor`, assuming every earlier measurement failed.
///
/// Maxima are bracketed on a [`GREEDY_SCAN_STEP`] grid and refined by
/// golden-section search.
pub fn greedy_schedule(
    model: &EffectiveModel,
    config: &ChainConfig,
    floor: f64,
) -> Result<MeasurementSchedule> {
    if !(floor > 0.0 && floor < 1.0) {
        return Err(Error::config("floor", format!("must lie in (0, 1), got {floor}")));
    }
    let n = model.n();
    let prop = UnitaryPropagator::new(model);
    let mut state = vec![Complex64::new(0.0, 0.0); n];
    state[0] = Complex64::new(1.0, 0.0);

    let mut times = Vec::new();
    let mut start = 0.0;
    'segments: loop {
        let coeffs = prop.decompose(&state);
        let p = |tau: f64| prop.receiver_population(&coeffs, tau);
        let h = GREEDY_SCAN_STEP;
        let (mut p_prev, mut p_cur) = (p(0.0), p(h));
        let mut i = 1u64;
        loop {
            let tau = i as f64 * h;
            if start + tau + h > config.t_max {
                break 'segments;
            }
            let p_next = p(tau + h);
            if p_cur > p_prev && p_cur >= p_next && p_cur > floor {
                let best = golden_max(&p, tau - h, tau + h);
                let t = start + best;
                times.push(t);
                // Failed outcome: remove the receiver amplitude and renormalize.
                state = prop.evolve(&state, best);
                state[n - 1] = Complex64::new(0.0, 0.0);
                let norm = state.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
                state.iter_mut().for_each(|a| *a /= norm);
                start = t;
                break;
            }
            p_prev = p_cur;
            p_cur = p_next;
            i += 1;
        }
    }
    if times.is_empty() {
        log::warn!("greedy schedule with floor {floor} produced no measurements");
    }
    Ok(MeasurementSchedule {
        empty_warning: times.is_empty(),
        times,
    })
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-12 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Result of one projective-baseline attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    /// Time of the successful measurement; `None` if the schedule ran out.
    pub arrival_time: Option<f64>,
    pub rounds: usize,
    /// Conditional success probability of each performed round.
    pub success_probabilities: Vec<f64>,
}

impl BaselineOutcome {
    /// `∏(1 − p_i)` after each round.
    pub fn cumulative_failure(&self) -> Vec<f64> {
        self.success_probabilities
            .iter()
            .scan(1.0, |acc, p| {
                *acc *= 1.0 - p;
                Some(*acc)
            })
            .collect()
    }
}

/// Conditional success probability at each scheduled time, given that all
/// earlier measurements failed. Independent of the random outcomes.
pub fn conditional_success_probabilities(
    model: &EffectiveModel,
    schedule: &MeasurementSchedule,
) -> Vec<f64> {
    let n = model.n();
    let prop = UnitaryPropagator::new(model);
    let mut state = vec![Complex64::new(0.0, 0.0); n];
    state[0] = Complex64::new(1.0, 0.0);
    let mut now = 0.0;
    let mut probs = Vec::with_capacity(schedule.len());
    for &t in &schedule.times {
        state = prop.evolve(&state, t - now);
        now = t;
        let p = state[n - 1].norm_sqr().clamp(0.0, 1.0);
        probs.push(p);
        // Failure projects the receiver node onto |0⟩|0⟩.
        state[n - 1] = Complex64::new(0.0, 0.0);
        let norm = state.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            state.iter_mut().for_each(|a| *a /= norm);
        }
    }
    probs
}

/// One projective-baseline attempt: at each scheduled time the parity
/// measurement succeeds with probability `ρ_NN`.
pub fn run_projective_baseline(
    model: &EffectiveModel,
    schedule: &MeasurementSchedule,
    seed: TrajectorySeed,
) -> Result<BaselineOutcome> {
    if schedule.is_empty() {
        return Err(Error::InvalidSchedule("no measurement times".into()));
    }
    let probs = conditional_success_probabilities(model, schedule);
    Ok(sample_baseline(&schedule.times, &probs, seed))
}

/// Stream family of projective-baseline seeds in [`derive_seed`]; no
/// measurement strength maps here.
pub const BASELINE_CELL: u64 = u64::MAX;

/// `count` baseline attempts seeded `derive_seed(master_seed, BASELINE_CELL, i)`.
pub fn run_baseline_ensemble(
    model: &EffectiveModel,
    schedule: &MeasurementSchedule,
    master_seed: u64,
    count: u64,
) -> Result<Vec<BaselineOutcome>> {
    if schedule.is_empty() {
        return Err(Error::InvalidSchedule("no measurement times".into()));
    }
    let probs = conditional_success_probabilities(model, schedule);
    Ok((0..count)
        .map(|i| sample_baseline(&schedule.times, &probs, derive_seed(master_seed, BASELINE_CELL, i)))
        .collect())
}

/// Draws one baseline outcome from precomputed round probabilities.
pub fn sample_baseline(times: &[f64], probs: &[f64], seed: TrajectorySeed) -> BaselineOutcome {
    let mut rng = ChaCha8Rng::from_seed(seed.to_bytes());
    let mut performed = Vec::new();
    for (&t, &p) in times.iter().zip(probs) {
        performed.push(p);
        if rng.random::<f64>() < p {
            return BaselineOutcome {
                arrival_time: Some(t),
                rounds: performed.len(),
                success_probabilities: performed,
            };
        }
    }
    BaselineOutcome {
        arrival_time: None,
        rounds: performed.len(),
        success_probabilities: performed,
    }
}

/// Expected arrival time of the baseline conditioned on success within the
/// schedule, `Σ t_r p_r ∏_{i<r}(1 − p_i) / (1 − ∏(1 − p_i))`.
pub fn expected_baseline_arrival(times: &[f64], probs: &[f64]) -> f64 {
    let mut survive = 1.0;
    let mut weighted = 0.0;
    for (&t, &p) in times.iter().zip(probs) {
        weighted += t * p * survive;
        survive *= 1.0 - p;
    }
    weighted / (1.0 - survive)
}

/// Unitary receiver population `|⟨N|e^{−iht}|1⟩|²`.
pub fn unitary_receiver_population(model: &EffectiveModel, t: f64) -> f64 {
    let prop = UnitaryPropagator::new(model);
    let mut start = vec![Complex64::new(0.0, 0.0); model.n()];
    start[0] = Complex64::new(1.0, 0.0);
    prop.receiver_population(&prop.decompose(&start), t)
}
