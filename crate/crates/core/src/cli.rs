//! The `dualchain` command line: `run`, `sweep`, `check` and `baseline`.
//!
//! Settings merge as flags over `--config` file over defaults. The merged
//! settings are written to `manifest.json` in the output directory, and
//! `--config manifest.json` reproduces the run byte for byte.
//!
//! Exit codes: 0 success, 1 failed checks or I/O error, 2 invalid
//! configuration or schedule, 3 numerical failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checks::{run_all, CheckSettings};
use crate::config::{ChainConfig, FieldConvention};
use crate::ensemble::{check_failures, execute, CellResult, RunControl, RunPlan, RunResult, Workers};
use crate::error::{Error, Result};
use crate::format::g9;
use crate::model::build_effective_model;
use crate::protocol::{
    conditional_success_probabilities, expected_baseline_arrival, greedy_schedule, run_baseline_ensemble,
    BaselineOutcome, MeasurementSchedule,
};
use crate::sme::write_trace_csv;
use crate::stats::{
    histogram_log, remaining_time_curve, sweep_curve, uniform_grid, write_histogram_csv, write_summary_csv,
    write_sweep_csv, write_tbar_csv, ArrivalSample, DEFAULT_BINS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Default measurement strengths and thresholds of `sweep`.
pub const SWEEP_K: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];
pub const SWEEP_THRESHOLDS: [f64; 3] = [0.9, 0.99, 0.999];

/// Spacing of the `tbar.csv` grid.
pub const TBAR_GRID_STEP: f64 = 1.0;

#[derive(Debug, Parser)]
#[command(name = "dualchain", version, about = "Quantum-trajectory simulation of monitored dual-chain state transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate an ensemble of arrival times.
    Run(RunArgs),
    /// Simulate a k × threshold grid and write the mean-arrival curve.
    Sweep(RunArgs),
    /// Run the oracle suite.
    Check(CheckArgs),
    /// Simulate the projective-measurement protocol.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args, Default)]
pub struct ChainArgs {
    /// JSON settings file with the same keys as the long flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Spins per chain.
    #[arg(long)]
    pub n: Option<usize>,
    /// Exchange coupling.
    #[arg(long, allow_hyphen_values = true)]
    pub j: Option<f64>,
    /// Uniform field.
    #[arg(long, allow_hyphen_values = true)]
    pub b: Option<f64>,
    /// Spins the field acts on: all-sites or exclude-receiver.
    #[arg(long, value_parser = parse_field_convention)]
    pub field_convention: Option<FieldConvention>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub trajectories: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads, or "auto".
    #[arg(long)]
    pub workers: Option<Workers>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Measurement strength; repeat or separate with commas.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub k: Vec<f64>,
    /// Arrival threshold; repeat or separate with commas.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub threshold: Vec<f64>,
    /// Detector efficiency.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Record ρ_NN, ⟨X⟩ and dr every this many steps.
    #[arg(long)]
    pub trace_stride: Option<u64>,
    /// Append-only checkpoint file; an interrupted run resumes from it.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct CheckArgs {
    /// Smaller samples; statistical bands widen as 1/√M.
    #[arg(long)]
    pub quick: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<Workers>,
    #[arg(long, hide = true)]
    pub corrupt_offdiag: bool,
}

#[derive(Debug, Args, Default)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Measure at each local maximum of the receiver population above the floor.
    #[arg(long)]
    pub greedy: bool,
    /// Population floor of the greedy schedule.
    #[arg(long)]
    pub floor: Option<f64>,
    /// Explicit measurement times, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub schedule: Vec<f64>,
}

fn parse_field_convention(s: &str) -> std::result::Result<FieldConvention, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("expected all-sites or exclude-receiver, got {s:?}"))
}

/// Settings of one experiment, as read from a config file or recorded in a
/// manifest. Every field is optional so that files can set any subset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Subcommand that wrote the manifest; informational.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    /// Crate version that wrote the manifest; informational.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_convention: Option<FieldConvention>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<Workers>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_stride: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub greedy: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
}

impl ExperimentConfig {
    /// Reads a config file or a manifest; the run-status keys a manifest
    /// adds are ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::config("config", format!("{}: {e}", path.display()));
        let mut value: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?).map_err(bad)?;
        if let Some(map) = value.as_object_mut() {
            map.remove("incomplete");
            map.remove("failures");
        }
        serde_json::from_value(value).map_err(bad)
    }

    /// Fields set in `self` win over `lower`.
    pub fn overlay(self, lower: Self) -> Self {
        Self {
            command: self.command.or(lower.command),
            version: self.version.or(lower.version),
            n: self.n.or(lower.n),
            j: self.j.or(lower.j),
            b: self.b.or(lower.b),
            field_convention: self.field_convention.or(lower.field_convention),
            k: self.k.or(lower.k),
            threshold: self.threshold.or(lower.threshold),
            eta: self.eta.or(lower.eta),
            dt: self.dt.or(lower.dt),
            t_max: self.t_max.or(lower.t_max),
            trajectories: self.trajectories.or(lower.trajectories),
            seed: self.seed.or(lower.seed),
            workers: self.workers.or(lower.workers),
            out: self.out.or(lower.out),
            trace_stride: self.trace_stride.or(lower.trace_stride),
            checkpoint: self.checkpoint.or(lower.checkpoint),
            greedy: self.greedy.or(lower.greedy),
            floor: self.floor.or(lower.floor),
            schedule: self.schedule.or(lower.schedule),
        }
    }

    /// Defaults shared by every subcommand: `N = 10`, `J = 1`, `B = 0`,
    /// `η = 1`, `dt = 1e-4`, `t_max = 2000`.
    fn chain_defaults() -> Self {
        let c = ChainConfig::default();
        Self {
            n: Some(c.n_sites),
            j: Some(c.coupling),
            b: Some(c.field),
            field_convention: Some(c.field_convention),
            eta: Some(c.efficiency),
            dt: Some(c.dt),
            t_max: Some(c.t_max),
            trajectories: Some(1024),
            seed: Some(1),
            workers: Some(Workers::Auto),
            out: Some(PathBuf::from("out")),
            ..Self::default()
        }
    }

    fn chain_config(&self, k: f64, threshold: f64) -> ChainConfig {
        ChainConfig {
            n_sites: self.n.expect("resolved"),
            coupling: self.j.expect("resolved"),
            field: self.b.expect("resolved"),
            field_convention: self.field_convention.expect("resolved"),
            meas_strength: k,
            efficiency: self.eta.expect("resolved"),
            dt: self.dt.expect("resolved"),
            fidelity_threshold: threshold,
            t_max: self.t_max.expect("resolved"),
        }
    }

    fn out_dir(&self) -> &Path {
        self.out.as_deref().expect("resolved")
    }
}

impl ChainArgs {
    fn to_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            n: self.n,
            j: self.j,
            b: self.b,
            field_convention: self.field_convention,
            dt: self.dt,
            t_max: self.t_max,
            trajectories: self.trajectories,
            seed: self.seed,
            workers: self.workers,
            out: self.out.clone(),
            ..ExperimentConfig::default()
        }
    }

    fn merged(&self, flags: ExperimentConfig, defaults: ExperimentConfig) -> Result<ExperimentConfig> {
        let file = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        Ok(flags.overlay(file).overlay(defaults))
    }
}

fn nonempty(v: &[f64]) -> Option<Vec<f64>> {
    (!v.is_empty()).then(|| v.to_vec())
}

impl RunArgs {
    fn resolve(&self, command: &str, k: &[f64], thresholds: &[f64]) -> Result<ExperimentConfig> {
        let flags = ExperimentConfig {
            k: nonempty(&self.k),
            threshold: nonempty(&self.threshold),
            eta: self.eta,
            trace_stride: self.trace_stride,
            checkpoint: self.checkpoint.clone(),
            ..self.chain.to_config()
        };
        let defaults = ExperimentConfig {
            k: Some(k.to_vec()),
            threshold: Some(thresholds.to_vec()),
            ..ExperimentConfig::chain_defaults()
        };
        let mut cfg = self.chain.merged(flags, defaults)?;
        cfg.command = Some(command.to_string());
        cfg.version = Some(env!("CARGO_PKG_VERSION").to_string());
        Ok(cfg)
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(args) => args.resolve("run", &[2.0], &[0.99]).and_then(|c| cmd_run(&c, false)),
        Command::Sweep(args) => args.resolve("sweep", &SWEEP_K, &SWEEP_THRESHOLDS).and_then(|c| cmd_run(&c, true)),
        Command::Check(args) => Ok(cmd_check(args)),
        Command::Baseline(args) => cmd_baseline(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig { .. } | Error::InvalidSchedule(_) | Error::CheckpointMismatch { .. } | Error::OracleScale(_) => {
            EXIT_CONFIG
        }
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_FAILED,
    }
}

fn plan_of(cfg: &ExperimentConfig) -> RunPlan {
    let k = cfg.k.clone().unwrap_or_default();
    let thresholds = cfg.threshold.clone().unwrap_or_default();
    let base = cfg.chain_config(k.first().copied().unwrap_or(0.0), thresholds.first().copied().unwrap_or(0.5));
    let mut plan = RunPlan::new(base, k, thresholds, cfg.trajectories.expect("resolved"), cfg.seed.expect("resolved"));
    plan.workers = cfg.workers.expect("resolved");
    plan.trace_stride = cfg.trace_stride;
    plan
}

/// `run` and `sweep`: simulate, then write every output file.
pub fn cmd_run(cfg: &ExperimentConfig, sweep: bool) -> Result<i32> {
    let plan = plan_of(cfg);
    plan.validate()?;
    let control = RunControl {
        checkpoint: cfg.checkpoint.clone(),
        progress: true,
        ..RunControl::default()
    };
    let result = execute(&plan, &control)?;
    check_failures(&result)?;
    eprintln!(
        "{} trajectories in {:.1} s on {} worker(s)",
        result.outcome_count() + result.failure_count(),
        result.wall_clock.as_secs_f64(),
        result.workers_used
    );
    let out = cfg.out_dir();
    let mut written = Vec::new();
    let wrote = write_run_outputs(cfg, &result, out, sweep, &mut written);
    if let Err(e) = wrote {
        // Leave no half-written result set behind.
        for path in written.iter().rev() {
            let _ = fs::remove_file(path);
        }
        return Err(e);
    }
    for row in sweep_curve(&result, plan.base.t_max) {
        match &row.summary {
            Some(s) => eprintln!(
                "k={} threshold={}: mean {} ± {} over {} arrivals, {} censored",
                g9(row.k),
                g9(row.threshold),
                g9(s.mean),
                g9(s.std_error),
                s.n,
                row.censored
            ),
            None => eprintln!("k={} threshold={}: too few arrivals", g9(row.k), g9(row.threshold)),
        }
        if row.total > 0 && row.censored * 100 > row.total {
            eprintln!("warning: more than 1% of this cell was censored at t_max");
        }
    }
    Ok(EXIT_OK)
}

fn create(path: PathBuf, written: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let f = File::create(&path)?;
    written.push(path);
    Ok(BufWriter::new(f))
}

fn cell_dir(out: &Path, cell: &CellResult, single: bool) -> PathBuf {
    if single {
        out.to_path_buf()
    } else {
        out.join(format!("k{}_thr{}", g9(cell.k), g9(cell.threshold)))
    }
}

fn write_run_outputs(
    cfg: &ExperimentConfig,
    result: &RunResult,
    out: &Path,
    sweep: bool,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let t_max = cfg.t_max.expect("resolved");
    let manifest = Manifest { config: cfg.clone(), incomplete: result.incomplete, failures: result.failure_count() };
    let mut w = create(out.join("manifest.json"), written)?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;

    let mut w = create(out.join("trajectories.csv"), written)?;
    writeln!(w, "cell_k,cell_threshold,index,arrival_time,censored,steps,seed")?;
    for cell in &result.cells {
        for o in &cell.outcomes {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                g9(cell.k),
                g9(cell.threshold),
                o.index,
                o.arrival_time.map_or_else(String::new, g9),
                u8::from(o.is_censored()),
                o.steps_taken,
                o.seed
            )?;
        }
    }
    w.flush()?;

    if result.failure_count() > 0 {
        let mut w = create(out.join("failures.csv"), written)?;
        writeln!(w, "cell_k,cell_threshold,index,seed,message")?;
        for cell in &result.cells {
            for f in &cell.failures {
                writeln!(w, "{},{},{},{},\"{}\"", g9(cell.k), g9(cell.threshold), f.index, f.seed, f.message.replace('"', "'"))?;
            }
        }
        w.flush()?;
    }

    if cfg.trace_stride.is_some() {
        let mut w = create(out.join("traces.csv"), written)?;
        writeln!(w, "cell_k,cell_threshold,index,t,rho_nn,expect_x,dr")?;
        for cell in &result.cells {
            for o in &cell.outcomes {
                let Some(trace) = &o.trace else { continue };
                let mut body = Vec::new();
                write_trace_csv(&mut body, trace)?;
                let body = String::from_utf8(body).expect("CSV is UTF-8");
                for line in body.lines().skip(1) {
                    writeln!(w, "{},{},{},{line}", g9(cell.k), g9(cell.threshold), o.index)?;
                }
            }
        }
        w.flush()?;
    }

    let rows = sweep_curve(result, t_max);
    let mut w = create(out.join("summary.csv"), written)?;
    write_summary_csv(&mut w, &rows)?;
    w.flush()?;
    if sweep {
        let mut w = create(out.join("sweep.csv"), written)?;
        write_sweep_csv(&mut w, &rows)?;
        w.flush()?;
    }

    let single = result.cells.len() == 1;
    let grid = uniform_grid(t_max, TBAR_GRID_STEP);
    for cell in &result.cells {
        let dir = cell_dir(out, cell, single);
        let sample = ArrivalSample::from_cell(cell, t_max)?;
        match histogram_log(&sample, DEFAULT_BINS) {
            Ok(hist) => {
                let mut w = create(dir.join("histogram.csv"), written)?;
                write_histogram_csv(&mut w, &hist)?;
                w.flush()?;
            }
            Err(e) => eprintln!("k={} threshold={}: no histogram ({e})", g9(cell.k), g9(cell.threshold)),
        }
        let mut w = create(dir.join("tbar.csv"), written)?;
        write_tbar_csv(&mut w, &remaining_time_curve(&sample, &grid))?;
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Manifest {
    #[serde(flatten)]
    config: ExperimentConfig,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    incomplete: bool,
    #[serde(skip_serializing_if = "is_zero")]
    failures: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

pub fn cmd_check(args: &CheckArgs) -> i32 {
    let defaults = CheckSettings::default();
    let settings = CheckSettings {
        quick: args.quick,
        seed: args.seed.unwrap_or(defaults.seed),
        workers: args.workers.map_or(defaults.workers, Workers::resolve),
        corrupt_offdiag: args.corrupt_offdiag,
    };
    let reports = run_all(&settings);
    let mut failed = Vec::new();
    for report in &reports {
        println!("{report}");
        if !report.passed {
            failed.push(report.name);
        }
    }
    if failed.is_empty() {
        println!("all {} checks passed", reports.len());
        EXIT_OK
    } else {
        println!("failed: {}", failed.join(", "));
        EXIT_FAILED
    }
}

/// Population floor of the greedy schedule when none is given.
pub const DEFAULT_GREEDY_FLOOR: f64 = 0.1;

pub fn cmd_baseline(args: &BaselineArgs) -> Result<i32> {
    let flags = ExperimentConfig {
        greedy: args.greedy.then_some(true),
        floor: args.floor,
        schedule: nonempty(&args.schedule),
        ..args.chain.to_config()
    };
    let mut cfg = args.chain.merged(flags, ExperimentConfig::chain_defaults())?;
    cfg.command = Some("baseline".into());
    cfg.version = Some(env!("CARGO_PKG_VERSION").to_string());
    // The measurement strength and threshold play no role in the baseline.
    let chain = cfg.chain_config(0.0, 0.5);
    chain.validate()?;
    let model = build_effective_model(&chain)?;
    let greedy = cfg.greedy.unwrap_or(false);
    let schedule = match (&cfg.schedule, greedy) {
        (Some(_), true) => return Err(Error::InvalidSchedule("give either --schedule or --greedy, not both".into())),
        (Some(times), false) => MeasurementSchedule::explicit(times.clone(), chain.t_max)?,
        (None, true) => {
            let floor = *cfg.floor.get_or_insert(DEFAULT_GREEDY_FLOOR);
            let s = greedy_schedule(&model, &chain, floor)?;
            if s.is_empty() {
                return Err(Error::InvalidSchedule(format!("greedy floor {floor} yields no measurement before t_max")));
            }
            s
        }
        (None, false) => return Err(Error::InvalidSchedule("give --schedule or --greedy".into())),
    };
    let count = cfg.trajectories.expect("resolved");
    if count == 0 {
        return Err(Error::config("trajectories", "must be at least 1"));
    }
    let outcomes = run_baseline_ensemble(&model, &schedule, cfg.seed.expect("resolved"), count)?;

    let out = cfg.out_dir().to_path_buf();
    let mut written = Vec::new();
    if let Err(e) = write_baseline_outputs(&cfg, &outcomes, &out, &mut written) {
        for path in written.iter().rev() {
            let _ = fs::remove_file(path);
        }
        return Err(e);
    }
    let arrivals: Vec<f64> = outcomes.iter().filter_map(|o| o.arrival_time).collect();
    let probs = conditional_success_probabilities(&model, &schedule);
    let expected = expected_baseline_arrival(&schedule.times, &probs);
    if arrivals.is_empty() {
        println!("baseline: no successful transfer in {count} attempts");
    } else {
        let n = arrivals.len() as f64;
        let mean = arrivals.iter().sum::<f64>() / n;
        let var = arrivals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        println!(
            "baseline: {} measurement times; mean arrival {} ± {} over {} of {count} attempts (exact {})",
            schedule.len(),
            g9(mean),
            g9((var / n).sqrt()),
            arrivals.len(),
            g9(expected)
        );
    }
    Ok(EXIT_OK)
}

fn write_baseline_outputs(
    cfg: &ExperimentConfig,
    outcomes: &[BaselineOutcome],
    out: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let mut w = create(out.join("manifest.json"), written)?;
    serde_json::to_writer_pretty(&mut w, cfg)?;
    writeln!(w)?;
    w.flush()?;
    let mut w = create(out.join("baseline.csv"), written)?;
    writeln!(w, "index,arrival_time,rounds")?;
    for (i, o) in outcomes.iter().enumerate() {
        writeln!(w, "{i},{},{}", o.arrival_time.map_or_else(String::new, g9), o.rounds)?;
    }
    w.flush()?;
    Ok(())
}
