use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use lbsort::datagen::{generate, DistKind, DistributionSpec, KeyDistribution};
use lbsort::key::encode_all;
use lbsort::transport::{connect_mesh, Backend, TransportConfig};
use lbsort::{run_worker, SortReport, WorkerStats};
use lbsort_bench::{
    report_memory, run_benchmark, sweep_multiplier, write_csv, BalanceReport, BenchResult, Check,
    MemoryReport, RunSpec, Sweep,
};

const CSV_HELP: &str = "\
CSV output (sort, sweep) has a fixed header:

  run_id,phase,seconds,worker,count,share,range_lo,range_hi

  run_id    <dist>-n<N>-p<P>-m<multiplier>, plus -r<rep> on timing rows
  phase     local_sort | sampling | splitter_selection | partitioning |
            exchange | final_merge | total | reference_sort | balance
  seconds   phase time of the slowest worker (timing rows only)
  worker    worker id (balance rows only)
  count     records held by that worker after the sort
  share     percent of all records held by that worker
  range_lo  smallest key on that worker, empty if it holds none
  range_hi  largest key on that worker, empty if it holds none

The exit code is 0 only if every built-in check passed.";

#[derive(Parser)]
#[command(
    name = "lbsort",
    version,
    about = "Load-balanced distributed sample sort benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write generated keys as little-endian i64 (or decimal text with --text).
    Gen(GenArgs),
    /// Sort generated keys and report per-phase timings and load balance.
    #[command(after_help = CSV_HELP)]
    Sort(SortArgs),
    /// Compare load balance and exchange time across sample multipliers.
    #[command(after_help = CSV_HELP)]
    Sweep(SweepArgs),
    /// Report peak auxiliary memory against final partition size per worker.
    Mem(RunArgs),
}

#[derive(Args, Clone)]
struct DistArgs {
    /// Key distribution.
    #[arg(long, default_value = "uniform")]
    dist: DistKind,
    /// Lower bound (uniform, duplicated).
    #[arg(long, allow_hyphen_values = true)]
    lo: Option<i64>,
    /// Exclusive upper bound (uniform, duplicated).
    #[arg(long, allow_hyphen_values = true)]
    hi: Option<i64>,
    /// Mean (normal).
    #[arg(long, allow_hyphen_values = true)]
    mean: Option<f64>,
    /// Standard deviation (normal).
    #[arg(long)]
    std_dev: Option<f64>,
    /// Log-scale location (right_skewed).
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    /// Log-scale spread (right_skewed).
    #[arg(long)]
    sigma: Option<f64>,
    /// Rate (exponential).
    #[arg(long)]
    rate: Option<f64>,
    /// Share of keys drawn from the duplicate pool (duplicated).
    #[arg(long)]
    fraction: Option<f64>,
    /// Size of the duplicate pool (duplicated).
    #[arg(long)]
    distinct: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl DistArgs {
    fn spec(&self) -> Result<DistributionSpec> {
        let mut d = self.dist.defaults();
        let mut used = Vec::new();
        let mut set = |name: &'static str, given: bool| {
            if given {
                used.push(name);
            }
            given
        };
        match &mut d {
            KeyDistribution::Uniform { lo, hi } => {
                if set("lo", self.lo.is_some()) {
                    *lo = self.lo.unwrap();
                }
                if set("hi", self.hi.is_some()) {
                    *hi = self.hi.unwrap();
                }
            }
            KeyDistribution::Normal { mean, std_dev } => {
                if set("mean", self.mean.is_some()) {
                    *mean = self.mean.unwrap();
                }
                if set("std-dev", self.std_dev.is_some()) {
                    *std_dev = self.std_dev.unwrap();
                }
            }
            KeyDistribution::RightSkewed { mu, sigma } => {
                if set("mu", self.mu.is_some()) {
                    *mu = self.mu.unwrap();
                }
                if set("sigma", self.sigma.is_some()) {
                    *sigma = self.sigma.unwrap();
                }
            }
            KeyDistribution::Exponential { rate } => {
                if set("rate", self.rate.is_some()) {
                    *rate = self.rate.unwrap();
                }
            }
            KeyDistribution::Duplicated {
                fraction,
                distinct,
                lo,
                hi,
            } => {
                if set("fraction", self.fraction.is_some()) {
                    *fraction = self.fraction.unwrap();
                }
                if set("distinct", self.distinct.is_some()) {
                    *distinct = self.distinct.unwrap();
                }
                if set("lo", self.lo.is_some()) {
                    *lo = self.lo.unwrap();
                }
                if set("hi", self.hi.is_some()) {
                    *hi = self.hi.unwrap();
                }
            }
        }
        let given = [
            ("lo", self.lo.is_some()),
            ("hi", self.hi.is_some()),
            ("mean", self.mean.is_some()),
            ("std-dev", self.std_dev.is_some()),
            ("mu", self.mu.is_some()),
            ("sigma", self.sigma.is_some()),
            ("rate", self.rate.is_some()),
            ("fraction", self.fraction.is_some()),
            ("distinct", self.distinct.is_some()),
        ];
        if let Some((name, _)) = given.iter().find(|(name, g)| *g && !used.contains(name)) {
            bail!(
                "--{name} does not apply to the {} distribution",
                self.dist.name()
            );
        }
        d.validate()?;
        Ok(DistributionSpec::new(d, self.seed))
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    dist: DistArgs,
    #[arg(long, default_value_t = 1_000_000)]
    n: usize,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
    /// One decimal key per line instead of binary.
    #[arg(long)]
    text: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    dist: DistArgs,
    /// Total number of keys.
    #[arg(long, default_value_t = 1_000_000)]
    n: usize,
    /// Worker count.
    #[arg(long, default_value_t = 4)]
    p: usize,
    /// Threads per worker.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Sample budget multiplier; 1.0 sends 256KB / p of samples per worker.
    #[arg(long, default_value_t = 1.0)]
    multiplier: f64,
    #[arg(long, env = "LBSORT_BACKEND", default_value = "inproc")]
    backend: Backend,
    /// Repetitions on the same input.
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Output file; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

impl RunArgs {
    fn spec(&self) -> Result<RunSpec> {
        let spec = RunSpec {
            threads: self.threads,
            multiplier: self.multiplier,
            backend: self.backend,
            repetitions: self.reps,
            ..RunSpec::new(self.dist.spec()?, self.n, self.p)
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct SortArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Run as one worker of a multi-process TCP cluster, listening here.
    #[arg(long, requires_all = ["peers", "id"])]
    listen: Option<SocketAddr>,
    /// Comma-separated addresses of all workers, in worker-id order.
    #[arg(long, value_delimiter = ',')]
    peers: Vec<SocketAddr>,
    /// This process's worker id.
    #[arg(long)]
    id: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated sample multipliers.
    #[arg(long, value_delimiter = ',', default_value = "0.004,1,1.4")]
    multipliers: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(args) => gen(&args).map(|_| true),
        Command::Sort(args) => sort(&args),
        Command::Sweep(args) => sweep(&args),
        Command::Mem(args) => mem(&args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn gen(args: &GenArgs) -> Result<()> {
    let keys = generate(&args.dist.spec()?, args.n)?;
    let mut out = open_out(Some(&args.out))?;
    if args.text {
        for k in &keys {
            writeln!(out, "{k}")?;
        }
    } else {
        out.write_all(&encode_all(&keys))?;
    }
    out.flush()?;
    Ok(())
}

fn report_checks(checks: &[Check]) -> bool {
    let mut ok = true;
    for c in checks.iter().filter(|c| !c.passed) {
        eprintln!("check failed: {} {}", c.name, c.detail);
        ok = false;
    }
    ok
}

fn print_balance(b: &BalanceReport) {
    eprintln!("worker      count    share  range");
    for (w, (&count, share)) in b.counts.iter().zip(&b.shares).enumerate() {
        let range = b.ranges[w].map_or("-".to_string(), |(lo, hi)| format!("[{lo}, {hi}]"));
        eprintln!("{w:>6} {count:>10} {share:>7.3}%  {range}");
    }
    eprintln!("max/min ratio {:.4}", b.ratio);
}

fn emit(args: &RunArgs, results: &[BenchResult], json: &impl Serialize) -> Result<()> {
    let mut out = open_out(args.out.as_deref())?;
    match args.format {
        Format::Csv => write_csv(&mut out, results)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, json)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn sort(args: &SortArgs) -> Result<bool> {
    if let Some(listen) = args.listen {
        return sort_tcp_worker(args, listen);
    }
    let result = run_benchmark(&args.run.spec()?)?;
    for report in &result.reports {
        for t in &report.phases {
            eprintln!("{:<20} {:>10.4}s", t.phase.name(), t.seconds);
        }
    }
    eprintln!(
        "{:<20} {:>10.4}s",
        "reference_sort", result.reference_seconds
    );
    print_balance(&result.balance);
    emit(&args.run, std::slice::from_ref(&result), &result)?;
    Ok(report_checks(&result.checks))
}

#[derive(Serialize, Deserialize)]
struct WorkerSummary {
    stats: WorkerStats,
    range: Option<(i64, i64)>,
    checks: Vec<(String, bool)>,
}

/// One worker of a cluster whose members are separate processes. Every
/// process generates the same input and sorts its own share; the master
/// collects the per-worker summaries and writes the report.
fn sort_tcp_worker(args: &SortArgs, listen: SocketAddr) -> Result<bool> {
    let spec = args.run.spec()?;
    let id = args.id.context("--id is required with --listen")?;
    if args.peers.len() != spec.workers {
        bail!(
            "--peers lists {} workers but --p is {}",
            args.peers.len(),
            spec.workers
        );
    }
    if spec.repetitions != 1 {
        bail!("--reps must be 1 for a multi-process cluster");
    }
    let mut config = spec.cluster();
    config.transport = TransportConfig {
        backend: Backend::Tcp,
        ..config.transport
    };
    let listener = TcpListener::bind(listen).with_context(|| format!("binding {listen}"))?;
    let mut ep = connect_mesh(id, listener, &args.peers, &config.transport)?;
    let inputs = spec.inputs()?;
    let out = run_worker(&mut ep, &inputs[id], &config)?;

    let records = &out.partition.records;
    let summary = WorkerSummary {
        range: out.partition.key_range,
        checks: vec![
            ("locally_sorted".into(), records.is_sorted()),
            (
                "provenance_round_trips".into(),
                records.iter().all(|r| {
                    let (w, i) = r.origin();
                    inputs.get(w).and_then(|v| v.get(i)) == Some(&r.key)
                }),
            ),
        ],
        stats: out.stats,
    };
    let Some(gathered) = ep.gather_to_master(&serde_json::to_vec(&summary)?)? else {
        return Ok(summary.checks.iter().all(|c| c.1));
    };

    let mut summaries = Vec::with_capacity(gathered.sources());
    for w in 0..gathered.sources() {
        summaries.push(serde_json::from_slice::<WorkerSummary>(gathered.part(w))?);
    }
    let mut checks: Vec<Check> = Vec::new();
    for s in &summaries {
        for (name, passed) in &s.checks {
            checks.push(Check {
                name: format!("{name}[worker {}]", s.stats.worker),
                passed: *passed,
                detail: String::new(),
            });
        }
    }
    let ranges = summaries.iter().map(|s| s.range).collect();
    let stats: Vec<WorkerStats> = summaries.into_iter().map(|s| s.stats).collect();
    let wall = stats
        .iter()
        .map(|s| s.phase_seconds.iter().sum::<f64>())
        .fold(0.0, f64::max);
    let report = SortReport::from_workers(stats, ranges, std::time::Duration::from_secs_f64(wall));
    let balance = BalanceReport::from_report(&report);
    checks.push(Check {
        name: "ranges_ordered".into(),
        passed: balance.ranges_ordered(),
        detail: String::new(),
    });
    checks.push(Check {
        name: "count_preserved".into(),
        passed: report.total == spec.n,
        detail: format!("{} of {}", report.total, spec.n),
    });
    print_balance(&balance);
    let result = BenchResult {
        spec,
        reports: vec![report],
        balance,
        reference_seconds: 0.0,
        checks,
    };
    emit(&args.run, std::slice::from_ref(&result), &result)?;
    Ok(report_checks(&result.checks))
}

fn sweep(args: &SweepArgs) -> Result<bool> {
    let Sweep { rows, runs } = sweep_multiplier(&args.run.spec()?, &args.multipliers)?;
    eprintln!("multiplier    ratio  min_share  max_share  sample_bytes  exchange_s");
    for r in &rows {
        eprintln!(
            "{:>10} {:>8.4} {:>9.3}% {:>9.3}% {:>13} {:>11.4}",
            r.multiplier, r.ratio, r.min_share, r.max_share, r.sample_bytes, r.exchange_seconds
        );
    }
    #[derive(Serialize)]
    struct Out<'a> {
        rows: &'a [lbsort_bench::SweepRow],
        runs: &'a [BenchResult],
    }
    emit(
        &args.run,
        &runs,
        &Out {
            rows: &rows,
            runs: &runs,
        },
    )?;
    let checks: Vec<Check> = runs.iter().flat_map(|r| r.checks.clone()).collect();
    Ok(report_checks(&checks))
}

fn mem(args: &RunArgs) -> Result<bool> {
    let report: MemoryReport = report_memory(&args.spec()?)?;
    let mut out = open_out(args.out.as_deref())?;
    match args.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            for row in &report.workers {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &report)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    eprintln!("max peak auxiliary / payload: {:.3}", report.max_ratio);
    Ok(report.max_ratio <= 2.5)
}
