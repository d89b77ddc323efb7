//! The end-to-end distributed sort.
//!
//! Every worker runs the same six phases:
//!
//! 1. `local_sort`: wrap keys into [`Record`]s and sort them with the worker's threads.
//! 2. `sampling`: send regular samples to the master.
//! 3. `splitter_selection`: the master picks `p - 1` splitters and broadcasts them.
//! 4. `partitioning`: cut the sorted records per destination and share the size matrix.
//! 5. `exchange`: ship each range to its destination at its precomputed offset.
//! 6. `final_merge`: merge the `p` incoming sorted runs.

mod multi;
mod query;
mod record;

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use multi::{multi_sort, JobHandle, MultiSort};
pub use query::{global_find, origin_of, QueryError};
pub use record::Record;

use crate::key::{decode_all, encode_all, SortKey, Wire};
use crate::local_sort::{merge_runs, merge_schedule, LocalSortError, LocalSorter, SortedRun};
use crate::memory::footprint;
use crate::partition::{
    partition_by, sample_count, select_splitters, take_regular_samples, PartitionError,
    PartitionPlan, SampleConfig, SplitterSet,
};
use crate::transport::{local_cluster, Endpoint, TransportConfig, TransportError};

const STATUS_SPLITTERS: u8 = 0;
const STATUS_NO_DATA: u8 = 1;
const STATUS_FAILED: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    LocalSort,
    Sampling,
    SplitterSelection,
    Partitioning,
    Exchange,
    FinalMerge,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::LocalSort,
        Phase::Sampling,
        Phase::SplitterSelection,
        Phase::Partitioning,
        Phase::Exchange,
        Phase::FinalMerge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::LocalSort => "local_sort",
            Phase::Sampling => "sampling",
            Phase::SplitterSelection => "splitter_selection",
            Phase::Partitioning => "partitioning",
            Phase::Exchange => "exchange",
            Phase::FinalMerge => "final_merge",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub workers: usize,
    /// Threads per worker for the local sort and the final merge.
    pub threads: usize,
    pub sample: SampleConfig,
    pub transport: TransportConfig,
    /// Seed for input generation by callers; the sort itself is deterministic.
    pub seed: u64,
}

impl ClusterConfig {
    pub fn new(workers: usize) -> Self {
        Self {
            workers,
            threads: 1,
            sample: SampleConfig::default(),
            transport: TransportConfig::default(),
            seed: 0,
        }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    pub fn with_multiplier(mut self, multiplier: f64) -> Self {
        self.sample.multiplier = multiplier;
        self
    }

    pub fn with_transport(mut self, transport: TransportConfig) -> Self {
        self.transport = transport;
        self
    }

    pub fn validate(&self) -> Result<(), SortError> {
        if self.workers == 0 {
            return Err(SortError::Config("workers must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(SortError::Config("threads must be >= 1".into()));
        }
        self.sample
            .validate()
            .map_err(|e| SortError::Config(e.to_string()))
    }

    /// Sampling parameters for keys of type `K`; the byte budget is counted
    /// in encoded keys.
    fn sample_for<K: Wire>(&self) -> SampleConfig {
        SampleConfig {
            key_bytes: K::SIZE,
            ..self.sample
        }
    }
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    LocalSort(#[from] LocalSortError),
    #[error("master aborted: {0}")]
    Remote(String),
}

impl StepError {
    /// True when this worker failed only because another one did.
    fn is_secondary(&self) -> bool {
        match self {
            StepError::Transport(e) => e.is_secondary(),
            StepError::Remote(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum SortError {
    #[error("invalid cluster config: {0}")]
    Config(String),
    #[error("cluster setup failed: {0}")]
    Setup(TransportError),
    #[error("{phase} failed on worker {worker}: {source}")]
    Step {
        phase: Phase,
        worker: usize,
        #[source]
        source: StepError,
    },
}

impl SortError {
    pub fn phase(&self) -> Option<Phase> {
        match self {
            SortError::Step { phase, .. } => Some(*phase),
            _ => None,
        }
    }

    fn is_secondary(&self) -> bool {
        matches!(self, SortError::Step { source, .. } if source.is_secondary())
    }
}

/// One worker's slice of the global order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SortedPartition<K> {
    pub worker_id: usize,
    pub records: Vec<Record<K>>,
    /// Smallest and largest key, `None` when empty.
    pub key_range: Option<(K, K)>,
}

impl<K: SortKey> SortedPartition<K> {
    fn new(worker_id: usize, records: Vec<Record<K>>) -> Self {
        let key_range = records
            .first()
            .zip(records.last())
            .map(|(a, b)| (a.key, b.key));
        Self {
            worker_id,
            records,
            key_range,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = K> + '_ {
        self.records.iter().map(|r| r.key)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerStats {
    pub worker: usize,
    pub input_count: usize,
    pub count: usize,
    /// Seconds per phase, in [`Phase::ALL`] order.
    pub phase_seconds: [f64; 6],
    /// Peak bytes of provenance records, merge scratch and staged frames.
    pub peak_aux_bytes: usize,
    /// In-memory size of the final partition.
    pub payload_bytes: usize,
    pub sample_count: usize,
    pub sample_bytes: usize,
    pub frames_sent: usize,
    pub bytes_sent: usize,
}

impl WorkerStats {
    pub fn phase(&self, phase: Phase) -> f64 {
        self.phase_seconds[phase as usize]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseTiming {
    pub phase: Phase,
    /// Slowest worker's time in this phase.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SortReport<K> {
    pub workers: usize,
    pub total: usize,
    pub phases: Vec<PhaseTiming>,
    pub wall_seconds: f64,
    pub worker_stats: Vec<WorkerStats>,
    pub key_ranges: Vec<Option<(K, K)>>,
}

impl<K: Copy> SortReport<K> {
    pub fn from_workers(
        stats: Vec<WorkerStats>,
        key_ranges: Vec<Option<(K, K)>>,
        wall: Duration,
    ) -> Self {
        let phases = Phase::ALL
            .iter()
            .map(|&phase| PhaseTiming {
                phase,
                seconds: stats.iter().map(|s| s.phase(phase)).fold(0.0, f64::max),
            })
            .collect();
        Self {
            workers: stats.len(),
            total: stats.iter().map(|s| s.count).sum(),
            phases,
            wall_seconds: wall.as_secs_f64(),
            worker_stats: stats,
            key_ranges,
        }
    }

    pub fn seconds(&self, phase: Phase) -> f64 {
        self.phases[phase as usize].seconds
    }

    pub fn counts(&self) -> Vec<usize> {
        self.worker_stats.iter().map(|s| s.count).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SortOutput<K> {
    pub partitions: Vec<SortedPartition<K>>,
    pub report: SortReport<K>,
}

impl<K: SortKey> SortOutput<K> {
    /// All keys in worker order.
    pub fn keys(&self) -> Vec<K> {
        self.partitions.iter().flat_map(|p| p.keys()).collect()
    }
}

/// Result of [`run_worker`] on one endpoint.
#[derive(Clone, Debug)]
pub struct WorkerOutput<K> {
    pub partition: SortedPartition<K>,
    pub stats: WorkerStats,
}

/// Sorts `inputs[i]` as worker `i`'s data on a fresh in-process or loopback
/// cluster of `config.workers` workers.
pub fn distributed_sort<K: SortKey>(
    config: &ClusterConfig,
    inputs: &[Vec<K>],
) -> Result<SortOutput<K>, SortError> {
    config.validate()?;
    if inputs.len() != config.workers {
        return Err(SortError::Config(format!(
            "{} inputs for {} workers",
            inputs.len(),
            config.workers
        )));
    }
    let start = Instant::now();
    let endpoints = local_cluster(config.workers, &config.transport).map_err(SortError::Setup)?;
    let results: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .zip(inputs)
            .map(|(mut ep, input)| {
                std::thread::Builder::new()
                    .name(format!("lbsort-worker-{}", ep.id()))
                    .spawn_scoped(scope, move || run_worker(&mut ep, input, config))
                    .expect("spawn worker thread")
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let wall = start.elapsed();

    let mut outputs = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(o) => outputs.push(o),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        let pick = errors.iter().position(|e| !e.is_secondary()).unwrap_or(0);
        return Err(errors.swap_remove(pick));
    }
    let (partitions, stats): (Vec<_>, Vec<_>) =
        outputs.into_iter().map(|o| (o.partition, o.stats)).unzip();
    let ranges = partitions.iter().map(|p| p.key_range).collect();
    Ok(SortOutput {
        partitions,
        report: SortReport::from_workers(stats, ranges, wall),
    })
}

struct PhaseClock {
    seconds: [f64; 6],
    last: Instant,
}

impl PhaseClock {
    fn start() -> Self {
        Self {
            seconds: [0.0; 6],
            last: Instant::now(),
        }
    }

    fn lap(&mut self, phase: Phase) {
        let now = Instant::now();
        self.seconds[phase as usize] += (now - self.last).as_secs_f64();
        self.last = now;
    }
}

/// Runs all six phases as the worker behind `ep`. Every worker of the
/// cluster must call this with the same `config`.
pub fn run_worker<K: SortKey>(
    ep: &mut Endpoint,
    input: &[K],
    config: &ClusterConfig,
) -> Result<WorkerOutput<K>, SortError> {
    let me = ep.id();
    let p = ep.workers();
    let meter = Arc::clone(ep.meter());
    let fail = |phase: Phase| {
        move |e: StepError| SortError::Step {
            phase,
            worker: me,
            source: e,
        }
    };
    let mut clock = PhaseClock::start();
    let sorter = LocalSorter::new(config.threads).with_meter(Arc::clone(&meter));

    // 1. Local sort, with provenance attached up front.
    let provenance = meter.charge(footprint::<Record<K>>(input.len()));
    let records: Vec<Record<K>> = input
        .iter()
        .enumerate()
        .map(|(i, &key)| Record::new(key, me, i))
        .collect();
    let sorted = sorter.sort(records);
    clock.lap(Phase::LocalSort);

    let mut stats = WorkerStats {
        worker: me,
        input_count: input.len(),
        ..Default::default()
    };

    let landing = if p == 1 {
        for phase in [
            Phase::Sampling,
            Phase::SplitterSelection,
            Phase::Partitioning,
            Phase::Exchange,
        ] {
            clock.lap(phase);
        }
        drop(provenance);
        sorted
    } else {
        // 2. Sampling.
        let sample_cfg = config.sample_for::<K>();
        let samples: Vec<K> = take_regular_samples(&sorted, sample_count(p, &sample_cfg))
            .into_iter()
            .map(|r| r.key)
            .collect();
        let encoded = encode_all(&samples);
        stats.sample_count = samples.len();
        stats.sample_bytes = encoded.len();
        let gathered = {
            let _samples = meter.charge(encoded.len());
            ep.gather_to_master(&encoded)
                .map_err(|e| fail(Phase::Sampling)(e.into()))?
        };
        clock.lap(Phase::Sampling);

        // 3. Splitter selection on the master, then broadcast.
        let mut verdict = Vec::new();
        let mut master_error = None;
        if let Some(g) = gathered {
            let _buffer = meter.charge(g.buffer.len());
            match choose_splitters::<K>(&g.buffer, &g.offsets, p) {
                Ok(Some(splitters)) => {
                    verdict.push(STATUS_SPLITTERS);
                    verdict.extend(encode_all(splitters.as_slice()));
                }
                Ok(None) => verdict.push(STATUS_NO_DATA),
                Err(e) => {
                    verdict.push(STATUS_FAILED);
                    verdict.extend(e.to_string().into_bytes());
                    master_error = Some(e);
                }
            }
        }
        let verdict = ep
            .broadcast_from_master(&verdict)
            .map_err(|e| fail(Phase::SplitterSelection)(e.into()))?;
        if let Some(e) = master_error {
            return Err(fail(Phase::SplitterSelection)(e));
        }
        let splitters = match verdict.split_first() {
            Some((&STATUS_SPLITTERS, body)) => Some(
                SplitterSet::new(decode_all::<K>(body))
                    .map_err(|e| fail(Phase::SplitterSelection)(e.into()))?,
            ),
            Some((&STATUS_NO_DATA, _)) => None,
            Some((&STATUS_FAILED, body)) => {
                return Err(fail(Phase::SplitterSelection)(StepError::Remote(
                    String::from_utf8_lossy(body).into_owned(),
                )))
            }
            _ => {
                return Err(fail(Phase::SplitterSelection)(StepError::Transport(
                    TransportError::Protocol {
                        worker: crate::transport::MASTER,
                        detail: "malformed splitter broadcast".into(),
                    },
                )))
            }
        };
        clock.lap(Phase::SplitterSelection);

        // 4. Partitioning and the size matrix.
        let plan = match &splitters {
            Some(s) => partition_by(&sorted, s, |r| r.key)
                .map_err(|e| fail(Phase::Partitioning)(e.into()))?,
            None => PartitionPlan::empty(p),
        };
        let sizes = ep
            .exchange_sizes(Record::<K>::SIZE, &plan.counts())
            .map_err(|e| fail(Phase::Partitioning)(e.into()))?;
        clock.lap(Phase::Partitioning);

        // 5. Exchange into one landing region.
        let mut landing = vec![Record::<K>::default(); sizes.incoming(me)];
        let sent = ep
            .exchange(
                &sizes,
                &sorted,
                plan.cuts(),
                &mut landing,
                config.sample.buffer_bytes,
            )
            .map_err(|e| fail(Phase::Exchange)(e.into()))?;
        stats.frames_sent = sent.frames_sent;
        stats.bytes_sent = sent.bytes_sent;
        drop(sorted);
        drop(provenance);
        clock.lap(Phase::Exchange);

        // 6. Merge the p incoming runs, which sit in source order.
        let bounds: Vec<usize> = (0..=p).map(|s| sizes.offset(s, me)).collect();
        let schedule = merge_schedule(p).map_err(|e| fail(Phase::FinalMerge)(e.into()))?;
        sorter
            .merge_layout(landing, &bounds, &schedule)
            .map_err(|e| fail(Phase::FinalMerge)(e.into()))?
    };
    clock.lap(Phase::FinalMerge);

    stats.count = landing.len();
    stats.phase_seconds = clock.seconds;
    stats.peak_aux_bytes = meter.peak();
    stats.payload_bytes = footprint::<Record<K>>(landing.len());
    Ok(WorkerOutput {
        partition: SortedPartition::new(me, landing),
        stats,
    })
}

/// Merges the gathered sample runs and picks splitters; `None` when no
/// worker had any data.
fn choose_splitters<K: SortKey>(
    buffer: &[u8],
    offsets: &[usize],
    p: usize,
) -> Result<Option<SplitterSet<K>>, StepError> {
    let runs: Vec<SortedRun<K>> = offsets
        .windows(2)
        .enumerate()
        .map(|(i, w)| SortedRun {
            data: decode_all(&buffer[w[0]..w[1]]),
            thread_id: i,
        })
        .collect();
    if runs.iter().all(|r| r.data.is_empty()) {
        return Ok(None);
    }
    let schedule = merge_schedule(runs.len())?;
    let merged = merge_runs(runs, &schedule)?;
    Ok(Some(select_splitters(&merged, p)?))
}
