//! Arrival-time distribution of one operating point: log-binned histogram,
//! mode, tail fraction and the expected remaining wait T̄(t) given no arrival
//! by t.
//!
//! ```text
//! cargo run --release --example arrival_statistics -- [trajectories]
//! ```

use dualchain::stats::{power_law_slope, uniform_grid, REPORTED_TAIL_CUT};
use dualchain::{histogram_log, remaining_time_curve, run_ensemble, summarize, ArrivalSample, ChainConfig, RunPlan};

fn main() -> dualchain::Result<()> {
    let count: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(256);
    let base = ChainConfig::new(10, 2.0, 0.99);
    let plan = RunPlan::new(base.clone(), vec![2.0], vec![0.99], count, 7);
    let result = run_ensemble(&plan)?;
    let sample = ArrivalSample::from_cell(&result.cells[0], base.t_max)?;

    let summary = summarize(&sample, &[REPORTED_TAIL_CUT])?;
    println!("mean arrival {:.2} ± {:.2}", summary.mean, summary.std_error);
    println!("mode near t = {:.2}", summary.mode_bin_center);
    println!(
        "fraction beyond t = {REPORTED_TAIL_CUT}: {:.3} (censored {:.3})",
        summary.tail_fraction(REPORTED_TAIL_CUT).unwrap_or(f64::NAN),
        summary.censored_fraction
    );

    let hist = histogram_log(&sample, 20)?;
    for ((c, n), d) in hist.centers().iter().zip(&hist.counts).zip(hist.densities()) {
        println!("{c:9.2} {n:5} {}", "#".repeat((d.max(1e-9).log10() * 8.0 + 40.0).max(0.0) as usize));
    }
    if let Some(slope) = power_law_slope(&hist, 20.0, 100.0) {
        println!("log-log density slope on [20, 100]: {slope:.2}");
    }

    let curve = remaining_time_curve(&sample, &uniform_grid(200.0, 20.0));
    println!("{:>6} {:>8} {:>8}", "t", "T̄(t)", "support");
    for p in &curve.points {
        println!("{:6.0} {:8.2} {:8}", p.t, p.tbar, p.support);
    }
    Ok(())
}
