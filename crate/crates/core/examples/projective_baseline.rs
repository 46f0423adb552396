//! The projective protocol: instantaneous parity measurements at the local
//! maxima of the receiver population, repeated until one succeeds.
//!
//! ```text
//! cargo run --release --example projective_baseline -- [floor]
//! ```

use dualchain::protocol::{conditional_success_probabilities, expected_baseline_arrival, run_baseline_ensemble};
use dualchain::{build_effective_model, greedy_schedule, ChainConfig};

fn main() -> dualchain::Result<()> {
    let floor: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let config = ChainConfig::new(10, 2.0, 0.99);
    let model = build_effective_model(&config)?;
    let schedule = greedy_schedule(&model, &config, floor)?;
    let probs = conditional_success_probabilities(&model, &schedule);

    println!("first rounds of the greedy schedule (floor {floor}):");
    for (t, p) in schedule.times.iter().zip(&probs).take(8) {
        println!("  t = {t:8.4}   success probability {p:.4}");
    }
    println!("{} rounds before t_max", schedule.len());

    let outcomes = run_baseline_ensemble(&model, &schedule, 1, 4096)?;
    let arrivals: Vec<f64> = outcomes.iter().filter_map(|o| o.arrival_time).collect();
    let mean = arrivals.iter().sum::<f64>() / arrivals.len() as f64;
    println!("sampled mean arrival {mean:.3} over {} attempts", arrivals.len());
    println!("exact mean arrival   {:.3}", expected_baseline_arrival(&schedule.times, &probs));
    Ok(())
}
