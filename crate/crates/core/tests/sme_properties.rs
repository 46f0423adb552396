//! Stepper invariants, with one Euler step checked against the dense matrix
//! form of the update written out independently here.

use dualchain::{build_effective_model, lindblad_evolve, sme_step, ChainConfig, DensityMatrix, SmeIntegrator};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn state(amps: &[(f64, f64)]) -> DensityMatrix {
    let v: Vec<Complex64> = amps.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
    DensityMatrix::from_pure(&v)
}

fn amplitudes() -> impl Strategy<Value = Vec<(f64, f64)>> {
    (2usize..9).prop_flat_map(|n| {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n)
            .prop_filter("nonzero", |v| v.iter().map(|(a, b)| a * a + b * b).sum::<f64>() > 1e-3)
    })
}

/// `ρ − i dt [H, ρ] − k dt [X, [X, ρ]] + √(2ηk) (Xρ + ρX − 2⟨X⟩ρ) dW`, then
/// divided by its trace.
fn dense_euler(rho: &DensityMatrix, config: &ChainConfig, dw: f64) -> DMatrix<Complex64> {
    let model = build_effective_model(config).unwrap();
    let cplx = |m: DMatrix<f64>| m.map(|v| Complex64::new(v, 0.0));
    let h = cplx(model.hamiltonian());
    let x = cplx(model.parity_matrix());
    let r = rho.to_dense();
    let ex = (&x * &r).trace();
    let (k, dt) = (config.meas_strength, config.dt);
    let xx = &x * (&x * &r - &r * &x) - (&x * &r - &r * &x) * &x;
    let next = &r - (&h * &r - &r * &h) * Complex64::new(0.0, dt) - xx * Complex64::new(k * dt, 0.0)
        + (&x * &r + &r * &x - &r * (ex * 2.0)) * Complex64::new((2.0 * config.efficiency * k).sqrt() * dw, 0.0);
    let tr = next.trace();
    next / tr
}

fn config(n: usize, k: f64, j: f64, eta: f64) -> ChainConfig {
    let mut c = ChainConfig::new(n, k, 0.99);
    c.coupling = j;
    c.efficiency = eta;
    c.dt = 1e-3;
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_step_matches_dense_update(
        amps in amplitudes(),
        k in 0.1f64..8.0,
        j in -2.0f64..2.0,
        eta in 0.2f64..=1.0,
        dw in -0.1f64..0.1,
    ) {
        let rho = state(&amps);
        let c = config(amps.len(), k, j, eta);
        let model = build_effective_model(&c).unwrap();
        let out = sme_step(&rho, &model, &c, dw).unwrap();
        let want = dense_euler(&rho, &c, dw);
        let got = out.state.to_dense();
        let err = (got - want).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12, "max entry error {err}");
        let ex = model.expect_parity(&rho);
        prop_assert!((out.expectation - ex).abs() < 1e-14);
        let dr = ex * c.dt + dw / (8.0 * eta * k).sqrt();
        prop_assert!((out.record_increment - dr).abs() < 1e-15);
    }

    #[test]
    fn trace_and_hermiticity_hold_every_step(
        amps in amplitudes(),
        k in 0.1f64..8.0,
        dws in prop::collection::vec(-0.05f64..0.05, 200),
    ) {
        let c = config(amps.len(), k, 1.0, 1.0);
        let model = build_effective_model(&c).unwrap();
        let mut integrator = SmeIntegrator::new(&model, &c);
        let mut rho = state(&amps);
        for dw in dws {
            integrator.step(&mut rho, dw).unwrap();
            prop_assert!((rho.trace() - Complex64::new(1.0, 0.0)).norm() <= 1e-12);
            prop_assert!(rho.hermiticity_defect() <= 1e-12);
            for i in 0..rho.n() {
                prop_assert_eq!(rho.get(i, i).im, 0.0);
            }
        }
    }

    #[test]
    fn negating_coupling_conjugates_the_state_exactly(
        n in 2usize..11,
        k in 0.1f64..8.0,
        dws in prop::collection::vec(-0.05f64..0.05, 300),
    ) {
        let plus = config(n, k, 1.0, 1.0);
        let minus = config(n, k, -1.0, 1.0);
        let (mp, mm) = (build_effective_model(&plus).unwrap(), build_effective_model(&minus).unwrap());
        let (mut ip, mut im) = (SmeIntegrator::new(&mp, &plus), SmeIntegrator::new(&mm, &minus));
        let (mut rp, mut rm) = (DensityMatrix::pure_site(n, 0), DensityMatrix::pure_site(n, 0));
        for dw in dws {
            let a = ip.step(&mut rp, dw).unwrap();
            let b = im.step(&mut rm, dw).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(rp.fidelity().to_bits(), rm.fidelity().to_bits());
            for i in 0..n {
                for j in 0..n {
                    prop_assert!(rp.get(i, j) == rm.get(i, j).conj());
                }
            }
        }
    }

    #[test]
    fn field_does_not_change_the_trajectory(
        n in 2usize..11,
        b in -5.0f64..5.0,
        dws in prop::collection::vec(-0.05f64..0.05, 100),
    ) {
        let c0 = config(n, 2.0, 1.0, 1.0);
        let mut cb = c0.clone();
        cb.field = b;
        let (m0, mb) = (build_effective_model(&c0).unwrap(), build_effective_model(&cb).unwrap());
        let (mut i0, mut ib) = (SmeIntegrator::new(&m0, &c0), SmeIntegrator::new(&mb, &cb));
        let (mut r0, mut rb) = (DensityMatrix::pure_site(n, 0), DensityMatrix::pure_site(n, 0));
        for dw in dws {
            i0.step(&mut r0, dw).unwrap();
            ib.step(&mut rb, dw).unwrap();
        }
        prop_assert!(r0 == rb);
    }

    #[test]
    fn lindblad_preserves_trace_and_hermiticity(amps in amplitudes(), k in 0.0f64..8.0, t in 0.0f64..2.0) {
        let c = config(amps.len(), k, 1.0, 1.0);
        let model = build_effective_model(&c).unwrap();
        let rho = lindblad_evolve(&state(&amps), &model, &c, t).unwrap();
        prop_assert!((rho.trace() - Complex64::new(1.0, 0.0)).norm() < 1e-10);
        prop_assert!(rho.hermiticity_defect() < 1e-12);
        prop_assert!(rho.min_eigenvalue() > -1e-9);
    }
}

#[test]
fn without_measurement_the_noise_has_no_effect() {
    let c = config(5, 0.0, 1.0, 1.0);
    let model = build_effective_model(&c).unwrap();
    let rho = DensityMatrix::pure_site(5, 0);
    let a = sme_step(&rho, &model, &c, 0.3).unwrap().state;
    let b = sme_step(&rho, &model, &c, -0.3).unwrap().state;
    assert!(a == b);
}

#[test]
fn non_finite_noise_is_an_error() {
    let c = config(4, 1.0, 1.0, 1.0);
    let model = build_effective_model(&c).unwrap();
    let err = sme_step(&DensityMatrix::pure_site(4, 0), &model, &c, f64::NAN).unwrap_err();
    assert!(err.is_numerical());
}
