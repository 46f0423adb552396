//! Reproducible parallel Monte Carlo ensembles.
//!
//! Every trajectory draws its noise from a stream seeded by
//! [`derive_seed`]`(master, cell, index)`, so the aggregated result does not
//! depend on the number of workers or on scheduling. The cell identifier is
//! the bit pattern of the measurement strength: thresholds of one sweep are
//! evaluated on the same noise realizations, and a trajectory's seed does not
//! change when the plan lists more or fewer `k` values.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::ChainConfig;
use crate::error::{Error, Result};
use crate::model::build_effective_model;
use crate::protocol::{run_lanes, TrajectoryJob, TrajectoryOutcome};

/// Seed of one trajectory's noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrajectorySeed {
    pub hi: u64,
    pub lo: u64,
}

impl TrajectorySeed {
    pub const fn new(hi: u64, lo: u64) -> Self {
        Self { hi, lo }
    }

    /// 32-byte key for a ChaCha stream.
    pub fn to_bytes(self) -> [u8; 32] {
        let mut out = [0u8; 32];
        out[0..8].copy_from_slice(&self.hi.to_le_bytes());
        out[8..16].copy_from_slice(&self.lo.to_le_bytes());
        out[16..24].copy_from_slice(&mix64(self.hi ^ 0x6a09_e667_f3bc_c908).to_le_bytes());
        out[24..32].copy_from_slice(&mix64(self.lo ^ 0xbb67_ae85_84ca_a73b).to_le_bytes());
        out
    }
}

impl fmt::Display for TrajectorySeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}{:016x}", self.hi, self.lo)
    }
}

/// SplitMix64 finalizer; a bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-trajectory seed. Injective in `(cell, index)` for a fixed master:
/// `hi` is a bijection of `cell`, and `lo` a bijection of `index` given `hi`.
pub fn derive_seed(master: u64, cell: u64, index: u64) -> TrajectorySeed {
    let hi = mix64(master ^ mix64(cell.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    let lo = mix64(index ^ hi);
    TrajectorySeed { hi, lo }
}

/// Cell identifier used in [`derive_seed`] for a measurement strength.
pub fn cell_id(meas_strength: f64) -> u64 {
    // Normalize -0.0 so k = 0 always maps to the same stream family.
    (meas_strength + 0.0).to_bits()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Workers {
    #[default]
    #[serde(with = "auto_tag")]
    Auto,
    Count(usize),
}

mod auto_tag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected \"auto\" or a count, got {s:?}")))
        }
    }
}

impl std::str::FromStr for Workers {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Workers::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected \"auto\" or a positive count, got {s:?}")),
            Ok(n) => Ok(Workers::Count(n)),
        }
    }
}

impl Workers {
    pub fn resolve(self) -> usize {
        match self {
            Workers::Auto => std::thread::available_parallelism().map_or(1, |n| n.get()),
            Workers::Count(n) => n.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub base: ChainConfig,
    pub k_values: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub n_trajectories: u64,
    pub master_seed: u64,
    #[serde(default)]
    pub workers: Workers,
    #[serde(default)]
    pub trace_stride: Option<u64>,
    /// `(k index, trajectory index)` forced to fail (fault injection).
    #[doc(hidden)]
    #[serde(skip)]
    pub poison: Option<(usize, u64)>,
}

impl RunPlan {
    pub fn new(base: ChainConfig, k_values: Vec<f64>, thresholds: Vec<f64>, n_trajectories: u64, master_seed: u64) -> Self {
        Self {
            base,
            k_values,
            thresholds,
            n_trajectories,
            master_seed,
            workers: Workers::Auto,
            trace_stride: None,
            poison: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() {
            return Err(Error::config("k", "at least one measurement strength is required"));
        }
        if self.thresholds.is_empty() {
            return Err(Error::config("threshold", "at least one threshold is required"));
        }
        if self.n_trajectories == 0 {
            return Err(Error::config("trajectories", "must be at least 1"));
        }
        if self.trace_stride == Some(0) {
            return Err(Error::config("trace-stride", "must be positive"));
        }
        for (i, &k) in self.k_values.iter().enumerate() {
            if self.k_values[..i].iter().any(|&q| cell_id(q) == cell_id(k)) {
                return Err(Error::config("k", format!("duplicate value {k}")));
            }
        }
        for &k in &self.k_values {
            for &thr in &self.thresholds {
                self.cell_config(k, thr).validate().map_err(|e| match e {
                    Error::InvalidConfig { field: "meas_strength", reason } => Error::config("k", reason),
                    Error::InvalidConfig { field: "fidelity_threshold", reason } => {
                        Error::config("threshold", reason)
                    }
                    other => other,
                })?;
            }
        }
        Ok(())
    }

    pub fn cell_config(&self, k: f64, threshold: f64) -> ChainConfig {
        ChainConfig {
            meas_strength: k,
            fidelity_threshold: threshold,
            ..self.base.clone()
        }
    }

    pub fn total_trajectories(&self) -> usize {
        self.k_values.len() * self.thresholds.len() * self.n_trajectories as usize
    }

    /// Identity of the plan for checkpoint matching; excludes settings that
    /// do not affect results (worker count).
    fn fingerprint(&self) -> Result<String> {
        let mut p = self.clone();
        p.workers = Workers::Auto;
        Ok(serde_json::to_string(&p)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFailure {
    pub index: u64,
    pub seed: TrajectorySeed,
    pub message: String,
}

/// Outcomes of one `(k, threshold)` cell, ordered by trajectory index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub k: f64,
    pub threshold: f64,
    pub outcomes: Vec<TrajectoryOutcome>,
    pub failures: Vec<TrajectoryFailure>,
}

impl CellResult {
    pub fn arrival_times(&self) -> Vec<f64> {
        self.outcomes.iter().filter_map(|o| o.arrival_time).collect()
    }

    pub fn censored_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_censored()).count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    /// Cells in plan order: `k` outer, threshold inner.
    pub cells: Vec<CellResult>,
    /// Set when the run was cancelled before every trajectory finished.
    pub incomplete: bool,
    #[serde(skip)]
    pub wall_clock: Duration,
    #[serde(skip)]
    pub workers_used: usize,
}

impl RunResult {
    /// Scheduling-independent serialization (timing excluded).
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&(&self.cells, self.incomplete)).expect("run results serialize")
    }

    pub fn failure_count(&self) -> usize {
        self.cells.iter().map(|c| c.failures.len()).sum()
    }

    pub fn outcome_count(&self) -> usize {
        self.cells.iter().map(|c| c.outcomes.len()).sum()
    }

    pub fn cell(&self, k: f64, threshold: f64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.k == k && c.threshold == threshold)
    }
}

/// Optional run controls: cancellation and an append-only checkpoint file.
#[derive(Debug, Clone, Default)]
pub struct RunControl {
    pub cancel: Option<Arc<AtomicBool>>,
    pub checkpoint: Option<PathBuf>,
    /// Print a line per finished `k` value to stderr.
    pub progress: bool,
}

/// One `(k, index)` task's result: outcomes per threshold, or a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TaskRecord {
    k_index: usize,
    index: u64,
    #[serde(flatten)]
    result: TaskResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TaskResult {
    Outcomes(Vec<TrajectoryOutcome>),
    Failure(TrajectoryFailure),
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    plan: String,
}

/// Runs every trajectory of the plan; fails only when more than 0.1% of
/// trajectories error.
pub fn run_ensemble(plan: &RunPlan) -> Result<RunResult> {
    let result = execute(plan, &RunControl::default())?;
    check_failures(&result)?;
    Ok(result)
}

pub fn check_failures(result: &RunResult) -> Result<()> {
    let failed = result.failure_count();
    let total = failed + result.outcome_count();
    // failed / total > 0.001, in integers.
    if failed * 1000 > total {
        return Err(Error::TooManyFailures { failed, total });
    }
    Ok(())
}

/// Runs the plan, recording per-trajectory failures without aborting.
pub fn execute(plan: &RunPlan, control: &RunControl) -> Result<RunResult> {
    plan.validate()?;
    let started = Instant::now();
    let workers = plan.workers.resolve();

    let mut done: HashMap<(usize, u64), TaskResult> = HashMap::new();
    let writer = match &control.checkpoint {
        Some(path) => {
            done = load_checkpoint(path, plan)?;
            Some(Mutex::new(open_checkpoint(path, plan, done.is_empty())?))
        }
        None => None,
    };

    let base = plan.cell_config(plan.k_values[0], plan.thresholds[0]);
    let model = build_effective_model(&base)?;

    let tasks: Vec<(usize, u64)> = (0..plan.k_values.len())
        .flat_map(|ki| (0..plan.n_trajectories).map(move |i| (ki, i)))
        .collect();
    let todo: Vec<usize> = (0..tasks.len()).filter(|t| !done.contains_key(&tasks[*t])).collect();
    let remaining: Vec<AtomicU64> = plan
        .k_values
        .iter()
        .enumerate()
        .map(|(ki, _)| AtomicU64::new(todo.iter().filter(|&&t| tasks[t].0 == ki).count() as u64))
        .collect();

    // Workers pull tasks from one shared queue, so no lane idles until the
    // queue is empty. Results are keyed by task, never by arrival order.
    let cursor = AtomicUsize::new(0);
    let fresh: Mutex<Vec<((usize, u64), TaskResult)>> = Mutex::new(Vec::new());
    let io_error: Mutex<Option<Error>> = Mutex::new(None);
    let cancelled = || control.cancel.as_ref().is_some_and(|c| c.load(Ordering::Relaxed));
    let stop = || cancelled() || io_error.lock().expect("error slot poisoned").is_some();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let next_job = || {
                    if stop() {
                        return None;
                    }
                    let t = *todo.get(cursor.fetch_add(1, Ordering::Relaxed))?;
                    let (ki, index) = tasks[t];
                    let k = plan.k_values[ki];
                    let job = TrajectoryJob {
                        index,
                        seed: derive_seed(plan.master_seed, cell_id(k), index),
                        poison: plan.poison == Some((ki, index)),
                    };
                    Some((t, job, k))
                };
                let finished = |t: usize, r: Result<Vec<TrajectoryOutcome>>| {
                    let (ki, index) = tasks[t];
                    let result = match r {
                        Ok(outcomes) => TaskResult::Outcomes(outcomes),
                        Err(e) => TaskResult::Failure(TrajectoryFailure {
                            index,
                            seed: derive_seed(plan.master_seed, cell_id(plan.k_values[ki]), index),
                            message: e.to_string(),
                        }),
                    };
                    if let Some(w) = &writer {
                        let record = TaskRecord {
                            k_index: ki,
                            index,
                            result: result.clone(),
                        };
                        if let Err(e) = append_record(w, &record) {
                            io_error.lock().expect("error slot poisoned").get_or_insert(e);
                        }
                    }
                    if remaining[ki].fetch_sub(1, Ordering::Relaxed) == 1 && control.progress {
                        eprintln!("k = {}: {} trajectories finished", plan.k_values[ki], plan.n_trajectories);
                    }
                    fresh.lock().expect("result list poisoned").push(((ki, index), result));
                };
                run_lanes(&model, &base, &plan.thresholds, plan.trace_stride, next_job, finished, stop);
            });
        }
    });
    if let Some(e) = io_error.into_inner().expect("error slot poisoned") {
        return Err(e);
    }
    for (key, result) in fresh.into_inner().expect("result list poisoned") {
        done.insert(key, result);
    }

    let mut incomplete = false;
    let mut cells: Vec<CellResult> = plan
        .k_values
        .iter()
        .flat_map(|&k| {
            plan.thresholds.iter().map(move |&threshold| CellResult {
                k,
                threshold,
                outcomes: Vec::new(),
                failures: Vec::new(),
            })
        })
        .collect();
    let n_thr = plan.thresholds.len();
    for key in &tasks {
        let ki = key.0;
        match done.remove(key) {
            None => incomplete = true,
            Some(TaskResult::Outcomes(outcomes)) => {
                for (ti, o) in outcomes.into_iter().enumerate() {
                    cells[ki * n_thr + ti].outcomes.push(o);
                }
            }
            Some(TaskResult::Failure(f)) => {
                for ti in 0..n_thr {
                    cells[ki * n_thr + ti].failures.push(f.clone());
                }
            }
        }
    }

    Ok(RunResult {
        cells,
        incomplete,
        wall_clock: started.elapsed(),
        workers_used: workers,
    })
}

fn append_record(writer: &Mutex<BufWriter<File>>, record: &TaskRecord) -> Result<()> {
    let mut w = writer.lock().expect("checkpoint writer poisoned");
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_checkpoint(path: &Path, plan: &RunPlan) -> Result<HashMap<(usize, u64), TaskResult>> {
    let mut done = HashMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(done),
        Err(e) => return Err(e.into()),
    };
    let mut lines = BufReader::new(file).lines();
    let Some(header) = lines.next().transpose()? else {
        return Ok(done);
    };
    let header: CheckpointHeader = serde_json::from_str(&header)?;
    if header.plan != plan.fingerprint()? {
        return Err(Error::CheckpointMismatch { path: path.to_owned() });
    }
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // A torn final line from an interrupted run is ignored.
        let Ok(record) = serde_json::from_str::<TaskRecord>(&line) else {
            log::warn!("ignoring unreadable checkpoint line in {path:?}");
            continue;
        };
        done.insert((record.k_index, record.index), record.result);
    }
    Ok(done)
}

fn open_checkpoint(path: &Path, plan: &RunPlan, fresh: bool) -> Result<BufWriter<File>> {
    let file = if fresh {
        File::create(path)?
    } else {
        let mut f = OpenOptions::new().append(true).open(path)?;
        // Terminate a possibly torn last line.
        f.write_all(b"\n")?;
        f
    };
    let mut w = BufWriter::new(file);
    if fresh {
        serde_json::to_writer(&mut w, &CheckpointHeader { plan: plan.fingerprint()? })?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(w)
}
