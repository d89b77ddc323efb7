//! Benchmark runs over generated key streams: timing per phase, load-balance
//! tables, sample-size sweeps and memory reports.

use std::io::Write;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use serde::Serialize;

use lbsort::datagen::{generate, split_even, DistributionSpec};
use lbsort::transport::{Backend, TransportConfig};
use lbsort::{distributed_sort, ClusterConfig, Phase, SortOutput, SortReport};

/// Column set of every run CSV, in order.
pub const CSV_COLUMNS: [&str; 8] = [
    "run_id", "phase", "seconds", "worker", "count", "share", "range_lo", "range_hi",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSpec {
    pub distribution: DistributionSpec,
    pub n: usize,
    pub workers: usize,
    pub threads: usize,
    pub multiplier: f64,
    pub backend: Backend,
    pub repetitions: usize,
}

impl RunSpec {
    pub fn new(distribution: DistributionSpec, n: usize, workers: usize) -> Self {
        Self {
            distribution,
            n,
            workers,
            threads: 1,
            multiplier: 1.0,
            backend: Backend::InProc,
            repetitions: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.workers >= 1, "--p must be at least 1");
        ensure!(self.threads >= 1, "--threads must be at least 1");
        ensure!(self.repetitions >= 1, "--reps must be at least 1");
        ensure!(
            self.multiplier.is_finite() && self.multiplier > 0.0,
            "--multiplier must be positive"
        );
        self.distribution.distribution.validate()?;
        Ok(())
    }

    pub fn cluster(&self) -> ClusterConfig {
        let mut cfg = ClusterConfig::new(self.workers)
            .with_threads(self.threads)
            .with_multiplier(self.multiplier)
            .with_transport(TransportConfig {
                backend: self.backend,
                ..Default::default()
            });
        cfg.seed = self.distribution.seed;
        cfg
    }

    /// `dist-nN-pP-mM`, shared by all rows of this spec.
    pub fn label(&self) -> String {
        format!(
            "{}-n{}-p{}-m{}",
            self.distribution.distribution.kind().name(),
            self.n,
            self.workers,
            self.multiplier
        )
    }

    pub fn inputs(&self) -> Result<Vec<Vec<i64>>> {
        let keys = generate(&self.distribution, self.n)?;
        Ok(split_even(&keys, self.workers))
    }
}

/// Per-worker counts, shares and key ranges of one sort.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BalanceReport {
    pub counts: Vec<usize>,
    /// Percent of all records held by each worker.
    pub shares: Vec<f64>,
    pub min_share: f64,
    pub max_share: f64,
    /// Largest count over smallest; infinite when a worker is empty, 1 when
    /// there is no data.
    pub ratio: f64,
    pub ranges: Vec<Option<(i64, i64)>>,
}

impl BalanceReport {
    pub fn new(counts: Vec<usize>, ranges: Vec<Option<(i64, i64)>>) -> Self {
        let total: usize = counts.iter().sum();
        let shares: Vec<f64> = counts
            .iter()
            .map(|&c| {
                if total == 0 {
                    0.0
                } else {
                    100.0 * c as f64 / total as f64
                }
            })
            .collect();
        let min = counts.iter().copied().min().unwrap_or(0);
        let max = counts.iter().copied().max().unwrap_or(0);
        let ratio = match (total, min) {
            (0, _) => 1.0,
            (_, 0) => f64::INFINITY,
            _ => max as f64 / min as f64,
        };
        Self {
            min_share: shares
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
                .min(100.0),
            max_share: shares.iter().copied().fold(0.0, f64::max),
            counts,
            shares,
            ratio,
            ranges,
        }
    }

    pub fn from_report(report: &SortReport<i64>) -> Self {
        Self::new(report.counts(), report.key_ranges.clone())
    }

    /// Ranges of non-empty workers never overlap and rise with worker id.
    pub fn ranges_ordered(&self) -> bool {
        let filled: Vec<_> = self.ranges.iter().flatten().collect();
        filled.iter().all(|(lo, hi)| lo <= hi) && filled.windows(2).all(|w| w[0].1 <= w[1].0)
    }

    /// Every share within `[lo, hi]` percent.
    pub fn shares_within(&self, lo: f64, hi: f64) -> bool {
        self.shares.iter().all(|s| (lo..=hi).contains(s))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchResult {
    pub spec: RunSpec,
    pub reports: Vec<SortReport<i64>>,
    pub balance: BalanceReport,
    /// Single-threaded sort of all keys, for speedup comparisons.
    pub reference_seconds: f64,
    pub checks: Vec<Check>,
}

impl BenchResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Verifies one sort against the sorted reference and the original inputs.
pub fn verify_output(out: &SortOutput<i64>, inputs: &[Vec<i64>], reference: &[i64]) -> Vec<Check> {
    let keys = out.keys();
    let provenance_ok = out.partitions.iter().flat_map(|p| &p.records).all(|r| {
        let (w, i) = r.origin();
        inputs.get(w).and_then(|v| v.get(i)) == Some(&r.key)
    });
    let balance = BalanceReport::from_report(&out.report);
    let phases_ok = out.report.phases.len() == Phase::ALL.len()
        && out
            .report
            .phases
            .iter()
            .all(|t| t.seconds >= 0.0 && t.seconds.is_finite());
    vec![
        Check::new(
            "matches_reference_sort",
            keys == reference,
            format!("{} keys out, {} in", keys.len(), reference.len()),
        ),
        Check::new("provenance_round_trips", provenance_ok, ""),
        Check::new(
            "ranges_ordered",
            balance.ranges_ordered(),
            format!("{:?}", balance.ranges),
        ),
        Check::new("six_phases_timed", phases_ok, ""),
    ]
}

/// Runs `spec.repetitions` sorts of the same generated input and checks
/// every one of them.
pub fn run_benchmark(spec: &RunSpec) -> Result<BenchResult> {
    spec.validate()?;
    let inputs = spec.inputs()?;
    let mut reference = inputs.concat();
    let t = Instant::now();
    reference.sort_unstable();
    let reference_seconds = t.elapsed().as_secs_f64();

    let config = spec.cluster();
    let mut reports = Vec::with_capacity(spec.repetitions);
    let mut checks = Vec::new();
    let mut balances = Vec::new();
    for rep in 0..spec.repetitions {
        let out =
            distributed_sort(&config, &inputs).with_context(|| format!("repetition {rep}"))?;
        for mut c in verify_output(&out, &inputs, &reference) {
            if spec.repetitions > 1 {
                c.name = format!("{}[{rep}]", c.name);
            }
            checks.push(c);
        }
        balances.push(BalanceReport::from_report(&out.report));
        reports.push(out.report);
    }
    let balance = balances[0].clone();
    checks.push(Check::new(
        "balance_repeatable",
        balances.iter().all(|b| *b == balance),
        "",
    ));
    Ok(BenchResult {
        spec: spec.clone(),
        reports,
        balance,
        reference_seconds,
        checks,
    })
}

#[derive(Clone, Debug, Serialize)]
struct CsvRow {
    run_id: String,
    phase: String,
    seconds: Option<f64>,
    worker: Option<usize>,
    count: Option<usize>,
    share: Option<f64>,
    range_lo: Option<i64>,
    range_hi: Option<i64>,
}

impl CsvRow {
    fn timing(run_id: &str, phase: &str, seconds: f64) -> Self {
        Self {
            run_id: run_id.into(),
            phase: phase.into(),
            seconds: Some(seconds),
            worker: None,
            count: None,
            share: None,
            range_lo: None,
            range_hi: None,
        }
    }
}

fn result_rows(r: &BenchResult) -> Vec<CsvRow> {
    let label = r.spec.label();
    let mut rows = Vec::new();
    for (rep, report) in r.reports.iter().enumerate() {
        let run_id = format!("{label}-r{rep}");
        for t in &report.phases {
            rows.push(CsvRow::timing(&run_id, t.phase.name(), t.seconds));
        }
        rows.push(CsvRow::timing(&run_id, "total", report.wall_seconds));
    }
    rows.push(CsvRow::timing(
        &label,
        "reference_sort",
        r.reference_seconds,
    ));
    let b = &r.balance;
    for (w, &count) in b.counts.iter().enumerate() {
        rows.push(CsvRow {
            run_id: label.clone(),
            phase: "balance".into(),
            seconds: None,
            worker: Some(w),
            count: Some(count),
            share: Some(b.shares[w]),
            range_lo: b.ranges[w].map(|r| r.0),
            range_hi: b.ranges[w].map(|r| r.1),
        });
    }
    rows
}

/// Writes the timing and balance rows of `results` with the [`CSV_COLUMNS`] header.
pub fn write_csv<W: Write>(out: W, results: &[BenchResult]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in results {
        for row in result_rows(r) {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub multiplier: f64,
    pub ratio: f64,
    pub min_share: f64,
    pub max_share: f64,
    /// Sample bytes sent to the master by all workers together.
    pub sample_bytes: usize,
    pub exchange_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<BenchResult>,
}

/// One benchmark per multiplier on the same input.
pub fn sweep_multiplier(base: &RunSpec, multipliers: &[f64]) -> Result<Sweep> {
    ensure!(
        multipliers.iter().all(|m| m.is_finite() && *m > 0.0),
        "multipliers must be positive"
    );
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &multiplier in multipliers {
        let spec = RunSpec {
            multiplier,
            ..base.clone()
        };
        let run = run_benchmark(&spec)?;
        let first = &run.reports[0];
        rows.push(SweepRow {
            multiplier,
            ratio: run.balance.ratio,
            min_share: run.balance.min_share,
            max_share: run.balance.max_share,
            sample_bytes: first.worker_stats.iter().map(|s| s.sample_bytes).sum(),
            exchange_seconds: first.seconds(Phase::Exchange),
        });
        runs.push(run);
    }
    Ok(Sweep { rows, runs })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorkerMemory {
    pub worker: usize,
    pub payload_bytes: usize,
    pub peak_aux_bytes: usize,
    /// Peak auxiliary bytes over payload bytes; 0 for an empty worker.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryReport {
    pub workers: Vec<WorkerMemory>,
    pub max_ratio: f64,
}

/// Peak auxiliary memory (provenance, merge scratch, staged frames) next to
/// the final partition size, per worker.
pub fn report_memory(spec: &RunSpec) -> Result<MemoryReport> {
    spec.validate()?;
    let out = distributed_sort(&spec.cluster(), &spec.inputs()?)?;
    let workers: Vec<WorkerMemory> = out
        .report
        .worker_stats
        .iter()
        .map(|s| WorkerMemory {
            worker: s.worker,
            payload_bytes: s.payload_bytes,
            peak_aux_bytes: s.peak_aux_bytes,
            ratio: if s.payload_bytes == 0 {
                0.0
            } else {
                s.peak_aux_bytes as f64 / s.payload_bytes as f64
            },
        })
        .collect();
    let max_ratio = workers.iter().map(|w| w.ratio).fold(0.0, f64::max);
    Ok(MemoryReport { workers, max_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lbsort::datagen::DistKind;

    #[test]
    fn balance_of_nothing() {
        let b = BalanceReport::new(vec![0, 0], vec![None, None]);
        assert_eq!(b.ratio, 1.0);
        assert!(b.ranges_ordered());
    }

    #[test]
    fn balance_shares() {
        let b = BalanceReport::new(vec![1, 3], vec![Some((0, 1)), Some((1, 9))]);
        assert_eq!(b.shares, vec![25.0, 75.0]);
        assert_eq!(b.ratio, 3.0);
        assert!(b.shares_within(25.0, 75.0));
        assert!(!BalanceReport::new(vec![1, 1], vec![Some((0, 5)), Some((4, 9))]).ranges_ordered());
    }

    #[test]
    fn csv_header_and_rows() {
        let spec = RunSpec::new(
            DistributionSpec::with_defaults(DistKind::Uniform, 1),
            1000,
            2,
        );
        let r = run_benchmark(&spec).unwrap();
        assert!(r.passed());
        let mut buf = Vec::new();
        write_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        // 6 phases + total + reference + 2 balance rows.
        assert_eq!(lines.count(), 10);
    }
}
