//! Runs the oracle suite and prints one line per check.
//!
//! ```text
//! cargo run --release --example oracle_checks -- [--quick]
//! ```

use dualchain::checks::{run_all, CheckSettings};

fn main() {
    let quick = std::env::args().any(|a| a == "--quick");
    let settings = CheckSettings { quick, ..CheckSettings::default() };
    let mut failed = 0;
    for report in run_all(&settings) {
        println!("{report}");
        failed += usize::from(!report.passed);
    }
    if failed > 0 {
        eprintln!("{failed} check(s) failed");
        std::process::exit(1);
    }
}
