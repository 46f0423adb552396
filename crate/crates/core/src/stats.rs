//! Arrival-time statistics: log-binned histograms, means with standard
//! errors, bin-based modes, tail fractions and the conditional expected
//! remaining waiting time `T̄(t) = E[T − t | T > t]`.
//!
//! Censored trajectories never enter means, modes or `T̄`; they are counted
//! separately and reported.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ensemble::{CellResult, RunResult};
use crate::error::{Error, Result};
use crate::format::g9;

/// Default number of log-spaced bins.
pub const DEFAULT_BINS: usize = 50;

/// Minimum number of samples beyond `t` for `T̄(t)` to be reported.
pub const DEFAULT_MIN_SUPPORT: usize = 20;

/// Tail cut reported in `summary.csv`.
pub const REPORTED_TAIL_CUT: f64 = 440.0;

/// Relative half-width used to widen the range of an all-equal sample.
const DEGENERATE_WIDENING: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSample {
    times: Vec<f64>,
    censored_count: usize,
    t_max: f64,
}

impl ArrivalSample {
    /// Sorts `times`; every time must lie in `(0, t_max]`.
    pub fn new(mut times: Vec<f64>, censored_count: usize, t_max: f64) -> Result<Self> {
        if let Some(t) = times.iter().find(|&&t| !(t > 0.0 && t <= t_max)) {
            return Err(Error::config("arrival_time", format!("{t} outside (0, {t_max}]")));
        }
        times.sort_by(f64::total_cmp);
        Ok(Self {
            times,
            censored_count,
            t_max,
        })
    }

    pub fn from_cell(cell: &CellResult, t_max: f64) -> Result<Self> {
        Self::new(cell.arrival_times(), cell.censored_count(), t_max)
    }

    /// Uncensored arrival times, ascending.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn censored_count(&self) -> usize {
        self.censored_count
    }

    pub fn total(&self) -> usize {
        self.times.len() + self.censored_count
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// `suffix[i] = Σ_{j ≥ i} times[j]`, with `suffix[len] = 0`.
    fn suffix_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.times.len() + 1];
        for i in (0..self.times.len()).rev() {
            out[i] = out[i + 1] + self.times[i];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Set when the sample had zero spread and the range was widened.
    pub degenerate: bool,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Geometric bin centers.
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect()
    }

    /// Counts per unit time.
    pub fn densities(&self) -> Vec<f64> {
        self.edges
            .windows(2)
            .zip(&self.counts)
            .map(|(w, &c)| c as f64 / (w[1] - w[0]))
            .collect()
    }

    /// Index of the most populated bin (first on ties).
    pub fn mode_bin(&self) -> usize {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        self.counts.iter().position(|&c| c == max).unwrap_or(0)
    }

    /// Bin that contains `t`, if any.
    pub fn bin_of(&self, t: f64) -> Option<usize> {
        let b = self.bins();
        if !(t >= self.edges[0] && t <= self.edges[b]) {
            return None;
        }
        let i = self.edges.partition_point(|&e| e <= t);
        Some(i.saturating_sub(1).min(b - 1))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Log-spaced histogram from the smallest to the largest sample value.
/// Bins are right-open except the last, which is closed.
pub fn histogram_log(sample: &ArrivalSample, bins: usize) -> Result<Histogram> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if bins < 2 {
        return Err(Error::config("bins", format!("must be at least 2, got {bins}")));
    }
    let (mut lo, mut hi) = (sample.times[0], sample.times[sample.len() - 1]);
    let degenerate = lo == hi;
    if degenerate {
        lo *= 1.0 - DEGENERATE_WIDENING;
        hi *= 1.0 + DEGENERATE_WIDENING;
    }
    let ratio = hi / lo;
    let mut edges: Vec<f64> = (0..=bins)
        .map(|i| lo * ratio.powf(i as f64 / bins as f64))
        .collect();
    edges[0] = lo;
    edges[bins] = hi;

    let mut counts = vec![0u64; bins];
    // Times are sorted, so a single sweep over the edges assigns them.
    let mut b = 0;
    for &t in &sample.times {
        while b + 1 < bins && t >= edges[b + 1] {
            b += 1;
        }
        counts[b] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFraction {
    pub cut: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    /// Uncensored sample size.
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
    pub mode_bin_center: f64,
    /// Fraction of all trajectories (censored included) whose arrival lies
    /// beyond each cut. Censored runs count as beyond every cut below `t_max`.
    pub tail_fractions: Vec<TailFraction>,
    pub censored_fraction: f64,
}

impl EnsembleSummary {
    pub fn tail_fraction(&self, cut: f64) -> Option<f64> {
        self.tail_fractions.iter().find(|t| t.cut == cut).map(|t| t.fraction)
    }
}

pub fn summarize(sample: &ArrivalSample, tail_cuts: &[f64]) -> Result<EnsembleSummary> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, have: n });
    }
    let mean = sample.suffix_sums()[0] / n as f64;
    let var = sample.times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let hist = histogram_log(sample, DEFAULT_BINS)?;
    let mode_bin_center = hist.centers()[hist.mode_bin()];
    let total = sample.total() as f64;
    let tail_fractions = tail_cuts
        .iter()
        .map(|&cut| {
            let above = n - sample.times.partition_point(|&t| t <= cut);
            let censored = if sample.t_max > cut { sample.censored_count } else { 0 };
            TailFraction {
                cut,
                fraction: (above + censored) as f64 / total,
            }
        })
        .collect();
    Ok(EnsembleSummary {
        n,
        mean,
        std_error: var.sqrt() / (n as f64).sqrt(),
        mode_bin_center,
        tail_fractions,
        censored_fraction: sample.censored_count as f64 / total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainingTimePoint {
    pub t: f64,
    pub tbar: f64,
    pub support: usize,
}

/// `T̄` on a grid; grid points with too little support are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainingTimeCurve {
    pub points: Vec<RemainingTimePoint>,
    pub min_support: usize,
}

impl RemainingTimeCurve {
    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.tbar).collect()
    }
}

pub fn remaining_time_curve(sample: &ArrivalSample, grid: &[f64]) -> RemainingTimeCurve {
    remaining_time_curve_with_support(sample, grid, DEFAULT_MIN_SUPPORT)
}

pub fn remaining_time_curve_with_support(
    sample: &ArrivalSample,
    grid: &[f64],
    min_support: usize,
) -> RemainingTimeCurve {
    let suffix = sample.suffix_sums();
    let n = sample.len();
    let points = grid
        .iter()
        .filter_map(|&t| {
            let first = sample.times.partition_point(|&x| x <= t);
            let support = n - first;
            (support >= min_support.max(1)).then(|| RemainingTimePoint {
                t,
                tbar: suffix[first] / support as f64 - t,
                support,
            })
        })
        .collect();
    RemainingTimeCurve { points, min_support }
}

/// Evenly spaced grid `0, step, 2·step, … ≤ end`.
pub fn uniform_grid(end: f64, step: f64) -> Vec<f64> {
    let count = (end / step * (1.0 + 1e-12)).floor() as usize;
    (0..=count).map(|i| i as f64 * step).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: f64,
    pub threshold: f64,
    /// `None` when the cell has fewer than two uncensored arrivals.
    pub summary: Option<EnsembleSummary>,
    pub total: usize,
    pub censored: usize,
}

/// One row per cell, ordered by `(threshold, k)`.
pub fn sweep_curve(results: &RunResult, t_max: f64) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = results
        .cells
        .iter()
        .map(|cell| {
            let sample = ArrivalSample::from_cell(cell, t_max).ok();
            SweepRow {
                k: cell.k,
                threshold: cell.threshold,
                summary: sample.as_ref().and_then(|s| summarize(s, &[REPORTED_TAIL_CUT]).ok()),
                total: cell.outcomes.len(),
                censored: cell.censored_count(),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.threshold.total_cmp(&b.threshold).then(a.k.total_cmp(&b.k)));
    rows
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Log-log slope of the histogram density over bins whose centers lie in
/// `[lo, hi]`; empty bins are skipped.
pub fn power_law_slope(hist: &Histogram, lo: f64, hi: f64) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = hist
        .centers()
        .into_iter()
        .zip(hist.densities())
        .filter(|&(c, d)| c >= lo && c <= hi && d > 0.0)
        .map(|(c, d)| (c.ln(), d.ln()))
        .unzip();
    least_squares_slope(&xs, &ys)
}

pub fn write_histogram_csv<W: Write>(mut w: W, hist: &Histogram) -> std::io::Result<()> {
    writeln!(w, "bin_lo,bin_hi,count")?;
    for (edge, count) in hist.edges.windows(2).zip(&hist.counts) {
        writeln!(w, "{},{},{}", g9(edge[0]), g9(edge[1]), count)?;
    }
    Ok(())
}

pub fn write_tbar_csv<W: Write>(mut w: W, curve: &RemainingTimeCurve) -> std::io::Result<()> {
    writeln!(w, "t,tbar,support")?;
    for p in &curve.points {
        writeln!(w, "{},{},{}", g9(p.t), g9(p.tbar), p.support)?;
    }
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, g9)
}

pub fn write_summary_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "k,threshold,n,mean,std_error,mode,tail_fraction_440,censored_fraction")?;
    for r in rows {
        let s = r.summary.as_ref();
        let censored_fraction = if r.total > 0 { r.censored as f64 / r.total as f64 } else { 0.0 };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            g9(r.k),
            g9(r.threshold),
            r.total - r.censored,
            opt(s.map(|s| s.mean)),
            opt(s.map(|s| s.std_error)),
            opt(s.map(|s| s.mode_bin_center)),
            opt(s.and_then(|s| s.tail_fraction(REPORTED_TAIL_CUT))),
            g9(censored_fraction),
        )?;
    }
    Ok(())
}

/// Mean arrival time against measurement strength, one line per cell.
pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "threshold,k,mean,std_error,n,censored_fraction")?;
    for r in rows {
        let s = r.summary.as_ref();
        let censored_fraction = if r.total > 0 { r.censored as f64 / r.total as f64 } else { 0.0 };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            g9(r.threshold),
            g9(r.k),
            opt(s.map(|s| s.mean)),
            opt(s.map(|s| s.std_error)),
            r.total - r.censored,
            g9(censored_fraction),
        )?;
    }
    Ok(())
}
