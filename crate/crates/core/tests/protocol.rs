//! Transfer attempts: continuous monitoring and the projective baseline.

use dualchain::ensemble::derive_seed;
use dualchain::full_space::FullSpaceSme;
use dualchain::protocol::{
    conditional_success_probabilities, expected_baseline_arrival, run_trajectory_multi, unitary_receiver_population,
    TrajectoryOptions,
};
use dualchain::sme::NoiseStream;
use dualchain::{
    build_effective_model, build_full_model, greedy_schedule, initial_state, run_projective_baseline,
    run_trajectory, ChainConfig, CodedQubit, MeasurementSchedule, SmeIntegrator, TrajectorySeed,
};
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::FRAC_PI_4;

fn config(n: usize, k: f64) -> ChainConfig {
    let mut c = ChainConfig::new(n, k, 0.9);
    c.dt = 1e-3;
    c.t_max = 200.0;
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn arrival_is_monotone_in_threshold(hi in any::<u64>(), lo in any::<u64>(), k in 0.5f64..6.0) {
        let c = config(6, k);
        let model = build_effective_model(&c).unwrap();
        let thresholds = [0.5, 0.9, 0.99, 0.999];
        let out = run_trajectory_multi(&c, &model, TrajectorySeed::new(hi, lo), 0, &thresholds, TrajectoryOptions::default()).unwrap();
        let times: Vec<f64> = out.iter().map(|o| o.arrival_time.unwrap_or(f64::INFINITY)).collect();
        prop_assert!(times.windows(2).all(|w| w[0] <= w[1]), "{times:?}");
        for o in &out {
            if let Some(t) = o.arrival_time {
                prop_assert!(o.peak_fidelity >= o.threshold);
                prop_assert!((t - o.steps_taken as f64 * c.dt).abs() < 1e-9);
            } else {
                prop_assert!(o.peak_fidelity < o.threshold);
            }
        }
    }

    #[test]
    fn baseline_failure_probability_is_a_product(times in prop::collection::vec(0.1f64..3.0, 1..20)) {
        let mut acc = 0.0;
        let times: Vec<f64> = times.iter().map(|d| { acc += d; acc }).collect();
        let c = config(6, 1.0);
        let model = build_effective_model(&c).unwrap();
        let schedule = MeasurementSchedule::explicit(times, c.t_max).unwrap();
        let probs = conditional_success_probabilities(&model, &schedule);
        prop_assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        let out = run_projective_baseline(&model, &schedule, TrajectorySeed::new(1, 2)).unwrap();
        let cumulative = out.cumulative_failure();
        let mut product = 1.0;
        for (i, p) in out.success_probabilities.iter().enumerate() {
            product *= 1.0 - p;
            prop_assert!((cumulative[i] - product).abs() < 1e-15);
            prop_assert!(i == 0 || cumulative[i] <= cumulative[i - 1]);
        }
    }
}

#[test]
fn two_site_population_follows_sin_squared() {
    let model = build_effective_model(&config(2, 1.0)).unwrap();
    for i in 0..50 {
        let t = 0.037 * i as f64;
        let p = unitary_receiver_population(&model, t);
        assert!((p - (2.0 * t).sin().powi(2)).abs() < 1e-12);
    }
}

#[test]
fn two_site_baseline_arrives_at_quarter_period_in_one_round() {
    let c = config(2, 1.0);
    let model = build_effective_model(&c).unwrap();
    let schedule = MeasurementSchedule::explicit(vec![0.7854], c.t_max).unwrap();
    for i in 0..20 {
        let out = run_projective_baseline(&model, &schedule, derive_seed(9, 0, i)).unwrap();
        assert_eq!(out.arrival_time, Some(0.7854));
        assert_eq!(out.rounds, 1);
    }
    let greedy = greedy_schedule(&model, &c, 0.1).unwrap();
    // A quadratic maximum pins the time only to about √ε.
    assert!((greedy.times[0] - FRAC_PI_4).abs() < 1e-7);
    let probs = conditional_success_probabilities(&model, &greedy);
    assert!((probs[0] - 1.0).abs() < 1e-12);
    assert!((expected_baseline_arrival(&greedy.times, &probs) - FRAC_PI_4).abs() < 1e-7);
}

#[test]
fn greedy_schedule_measures_at_population_maxima() {
    let c = config(10, 1.0);
    let model = build_effective_model(&c).unwrap();
    let schedule = greedy_schedule(&model, &c, 0.1).unwrap();
    let t0 = schedule.times[0];
    let p = |t: f64| unitary_receiver_population(&model, t);
    assert!(p(t0) > 0.1);
    assert!(p(t0) >= p(t0 - 1e-4) && p(t0) >= p(t0 + 1e-4));
    // Nothing earlier clears the floor at a local maximum.
    let mut t = 1e-3;
    while t < t0 - 1e-3 {
        let local_max = p(t) >= p(t - 1e-3) && p(t) >= p(t + 1e-3);
        assert!(!(local_max && p(t) > 0.1), "missed maximum at {t}");
        t += 1e-3;
    }
}

/// The encoded amplitudes factor out: the full two-chain simulation gives
/// the same receiver weight for every encoded qubit.
#[test]
fn arrival_dynamics_do_not_depend_on_the_encoded_state() {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let qubits = [
        CodedQubit::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)).unwrap(),
        CodedQubit::new(Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)).unwrap(),
        CodedQubit::new(Complex64::new(s, 0.0), Complex64::new(s, 0.0)).unwrap(),
    ];
    let mut c = config(3, 2.0);
    c.field = 0.3;
    let model = build_effective_model(&c).unwrap();
    let mut traces = Vec::new();
    for q in qubits {
        let full = build_full_model(&c, q).unwrap();
        let mut fs = FullSpaceSme::new(&full, &c);
        let mut noise = NoiseStream::new(derive_seed(5, 1, 1), c.dt);
        let trace: Vec<f64> = (0..1500)
            .map(|_| {
                fs.step(noise.draw()).unwrap();
                fs.coded_receiver_overlap()
            })
            .collect();
        traces.push(trace);
    }
    let mut integrator = SmeIntegrator::new(&model, &c);
    let mut rho = initial_state(&model);
    let mut noise = NoiseStream::new(derive_seed(5, 1, 1), c.dt);
    for step in 0..1500 {
        integrator.step(&mut rho, noise.draw()).unwrap();
        for trace in &traces {
            assert!((trace[step] - rho.fidelity()).abs() < 1e-6);
        }
    }
}

#[test]
fn censored_attempt_reports_no_arrival() {
    let mut c = config(10, 2.0);
    c.t_max = 0.5;
    let model = build_effective_model(&c).unwrap();
    let out = run_trajectory(&c, &model, TrajectorySeed::new(3, 4)).unwrap();
    assert!(out.is_censored());
    assert_eq!(out.steps_taken, 500);
}
