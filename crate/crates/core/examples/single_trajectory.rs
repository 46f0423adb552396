//! Follows one monitored transfer attempt and prints the receiver overlap,
//! the parity expectation and the measurement record along the way.
//!
//! ```text
//! cargo run --release --example single_trajectory -- [seed]
//! ```

use dualchain::protocol::{run_trajectory_multi, TrajectoryOptions};
use dualchain::{build_effective_model, derive_seed, ChainConfig};

fn main() -> dualchain::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let config = ChainConfig::new(10, 2.0, 0.99);
    let model = build_effective_model(&config)?;
    let thresholds = [0.9, 0.99, 0.999];
    let options = TrajectoryOptions { trace_stride: Some(2000), ..Default::default() };
    let outcomes = run_trajectory_multi(&config, &model, derive_seed(seed, 0, 0), 0, &thresholds, options)?;

    println!("{:>8} {:>8} {:>8} {:>10}", "t", "rho_NN", "<X>", "dr");
    let trace = outcomes.last().and_then(|o| o.trace.as_ref()).expect("trace requested");
    for p in trace.iter().take(60) {
        println!("{:8.2} {:8.4} {:8.4} {:10.5}", p.t, p.rho_nn, p.expect_x, p.dr);
    }
    if trace.len() > 60 {
        println!("... {} more samples", trace.len() - 60);
    }
    for o in &outcomes {
        match o.arrival_time {
            Some(t) => println!("threshold {}: arrival at t = {t:.4}", o.threshold),
            None => println!("threshold {}: censored at t_max", o.threshold),
        }
    }
    Ok(())
}
