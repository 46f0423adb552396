//! Mean arrival time against measurement strength for several thresholds.
//! Too weak a measurement rarely catches the excitation; too strong a one
//! freezes it (Zeno effect). A scaled-down grid keeps this quick.
//!
//! ```text
//! cargo run --release --example measurement_sweep -- [trajectories]
//! ```

use dualchain::stats::sweep_curve;
use dualchain::{run_ensemble, ChainConfig, RunPlan};

fn main() -> dualchain::Result<()> {
    let count: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(128);
    let mut base = ChainConfig::new(10, 2.0, 0.9);
    base.t_max = 500.0;
    let plan = RunPlan::new(base, vec![0.5, 1.0, 2.0, 4.0, 8.0], vec![0.9, 0.99], count, 2024);
    let result = run_ensemble(&plan)?;
    println!("{:>9} {:>5} {:>9} {:>8} {:>9}", "threshold", "k", "mean", "se", "censored");
    for row in sweep_curve(&result, plan.base.t_max) {
        let (mean, se) = row.summary.as_ref().map_or((f64::NAN, f64::NAN), |s| (s.mean, s.std_error));
        println!("{:>9} {:>5} {mean:>9.2} {se:>8.2} {:>9}", row.threshold, row.k, row.censored);
    }
    println!("({count} trajectories per cell, {:.1} s)", result.wall_clock.as_secs_f64());
    Ok(())
}
