//! Builds the effective N-site model and checks it against the brute-force
//! two-chain Hamiltonian restricted to the coded states.
//!
//! ```text
//! cargo run --release --example effective_model
//! ```

use dualchain::model::restriction_deviation;
use dualchain::{build_effective_model, build_full_model, ChainConfig, CodedQubit};
use num_complex::Complex64;

fn main() -> dualchain::Result<()> {
    let config = ChainConfig::new(10, 2.0, 0.99);
    let model = build_effective_model(&config)?;
    println!("N = 10 effective model (J = 1, B = 0)");
    println!("  diagonal  {:?}", model.diag);
    println!("  hopping   {:?}", model.offdiag);
    println!("  parity    {:?}", model.parity);

    // Any encoded qubit gives the same restricted dynamics.
    let qubit = CodedQubit::new(Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8))?;
    for n in 2..=5 {
        let small = ChainConfig::new(n, 2.0, 0.99);
        let full = build_full_model(&small, qubit)?;
        let (offset, dev) = restriction_deviation(&full.restricted_hamiltonian(), &build_effective_model(&small)?);
        println!(
            "N = {n}: 4^N = {:>4}, offset {offset:+.3}, max deviation {dev:.1e}, closure residual {:.1e}",
            full.dimension,
            full.closure_residual()
        );
    }
    Ok(())
}
