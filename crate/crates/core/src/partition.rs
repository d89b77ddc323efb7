//! Sampling, splitter selection and range partitioning.
//!
//! Each worker sends a buffer-sized regular sample of its sorted data to the
//! master, the master picks `p - 1` splitters at evenly spaced ranks, and every
//! worker cuts its sorted data into `p` contiguous ranges by binary search.
//!
//! Runs of equal splitters get special treatment: instead of sending every
//! copy of the duplicated key to one destination, the range between the
//! neighbouring distinct splitters is divided equally across all the
//! destinations the group bounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Size of the master's sample receive buffer.
pub const DEFAULT_BUFFER_BYTES: usize = 256 * 1024;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("invalid sample config: {0}")]
    InvalidConfig(&'static str),
    #[error("only {have} samples for {need} splitters; raise the sample multiplier")]
    InsufficientSamples { have: usize, need: usize },
    #[error("{0} is not sorted")]
    Unsorted(&'static str),
}

/// How many bytes of samples each worker may send to the master.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub buffer_bytes: usize,
    /// Scales the per-worker budget of `buffer_bytes / p`.
    pub multiplier: f64,
    pub key_bytes: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            buffer_bytes: DEFAULT_BUFFER_BYTES,
            multiplier: 1.0,
            key_bytes: 8,
        }
    }
}

impl SampleConfig {
    pub fn new(
        buffer_bytes: usize,
        multiplier: f64,
        key_bytes: usize,
    ) -> Result<Self, PartitionError> {
        let cfg = Self {
            buffer_bytes,
            multiplier,
            key_bytes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PartitionError> {
        if self.buffer_bytes == 0 {
            return Err(PartitionError::InvalidConfig("buffer_bytes must be > 0"));
        }
        if !(self.multiplier.is_finite() && self.multiplier > 0.0) {
            return Err(PartitionError::InvalidConfig("multiplier must be > 0"));
        }
        if self.key_bytes == 0 {
            return Err(PartitionError::InvalidConfig("key_bytes must be > 0"));
        }
        Ok(())
    }
}

/// Samples per worker: `multiplier * buffer_bytes / (p * key_bytes)`, at least
/// one. A single worker needs no splitters and samples nothing.
pub fn sample_count(p: usize, cfg: &SampleConfig) -> usize {
    if p <= 1 {
        return 0;
    }
    let budget = cfg.multiplier * cfg.buffer_bytes as f64 / (p as f64 * cfg.key_bytes as f64);
    (budget.floor() as usize).max(1)
}

/// Takes `k` samples at ranks `floor((i + 1) * len / (k + 1))`. Returns the
/// whole input when `k >= len`.
pub fn take_regular_samples<T: Clone>(local_sorted: &[T], k: usize) -> Vec<T> {
    let len = local_sorted.len();
    if k >= len {
        return local_sorted.to_vec();
    }
    (0..k)
        .map(|i| local_sorted[(i + 1) * len / (k + 1)].clone())
        .collect()
}

/// The `p - 1` global splitters. Nondecreasing; duplicates allowed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitterSet<K> {
    splitters: Vec<K>,
}

impl<K: Ord> SplitterSet<K> {
    pub fn new(splitters: Vec<K>) -> Result<Self, PartitionError> {
        if !splitters.is_sorted() {
            return Err(PartitionError::Unsorted("splitter set"));
        }
        Ok(Self { splitters })
    }

    pub fn empty() -> Self {
        Self {
            splitters: Vec::new(),
        }
    }

    /// Number of destinations these splitters cut data into.
    pub fn destinations(&self) -> usize {
        self.splitters.len() + 1
    }

    pub fn as_slice(&self) -> &[K] {
        &self.splitters
    }

    pub fn into_vec(self) -> Vec<K> {
        self.splitters
    }
}

/// Picks `p - 1` splitters at ranks `floor((i + 1) * m / p)` of the merged samples.
pub fn select_splitters<K: Ord + Clone>(
    all_samples: &[K],
    p: usize,
) -> Result<SplitterSet<K>, PartitionError> {
    let need = p.saturating_sub(1);
    if need == 0 {
        return Ok(SplitterSet::empty());
    }
    let m = all_samples.len();
    if m < need {
        return Err(PartitionError::InsufficientSamples { have: m, need });
    }
    if !all_samples.is_sorted() {
        return Err(PartitionError::Unsorted("merged samples"));
    }
    let splitters = (0..need)
        .map(|i| all_samples[(i + 1) * m / p].clone())
        .collect();
    Ok(SplitterSet { splitters })
}

/// `p + 1` cut positions into a locally sorted sequence; destination `j`
/// receives `[cuts[j], cuts[j + 1])`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    cuts: Vec<usize>,
}

impl PartitionPlan {
    /// Every destination empty.
    pub fn empty(p: usize) -> Self {
        Self {
            cuts: vec![0; p.max(1) + 1],
        }
    }

    pub fn from_cuts(cuts: Vec<usize>) -> Option<Self> {
        let ok = cuts.len() >= 2 && cuts[0] == 0 && cuts.is_sorted();
        ok.then_some(Self { cuts })
    }

    pub fn cuts(&self) -> &[usize] {
        &self.cuts
    }

    pub fn destinations(&self) -> usize {
        self.cuts.len() - 1
    }

    pub fn range(&self, dest: usize) -> std::ops::Range<usize> {
        self.cuts[dest]..self.cuts[dest + 1]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.cuts.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn total(&self) -> usize {
        *self.cuts.last().unwrap()
    }
}

/// Cuts a sorted key sequence at the splitters (see [`partition_by`]).
pub fn partition_local<K: Ord + Clone>(
    local_sorted: &[K],
    splitters: &SplitterSet<K>,
) -> Result<PartitionPlan, PartitionError> {
    partition_by(local_sorted, splitters, |k| k.clone())
}

/// Cuts `local_sorted` (ordered by `key`) into one range per destination.
///
/// A splitter that appears once cuts at its lower bound, so keys equal to
/// `splitters[j]` land in destination `j + 1`. A run of `g > 1` equal
/// splitters starting at index `j` bounds destinations `j..=j + g`. The local
/// range those destinations cover, from the previous cut up to the lower
/// bound of the next distinct splitter, is split into `g + 1` equal
/// consecutive pieces (the first `range % (g + 1)` one longer). Each inner
/// cut is clamped to the run of keys equal to the duplicated value so that
/// ranges stay ordered by key.
pub fn partition_by<T, K, F>(
    local_sorted: &[T],
    splitters: &SplitterSet<K>,
    key: F,
) -> Result<PartitionPlan, PartitionError>
where
    K: Ord,
    F: Fn(&T) -> K,
{
    if !local_sorted.is_sorted_by_key(&key) {
        return Err(PartitionError::Unsorted("local data"));
    }
    let s = splitters.as_slice();
    let len = local_sorted.len();
    let p = s.len() + 1;
    let lower = |v: &K| local_sorted.partition_point(|x| key(x) < *v);
    let upper = |v: &K| local_sorted.partition_point(|x| key(x) <= *v);

    let mut cuts = vec![0usize; p + 1];
    cuts[p] = len;
    let mut j = 0;
    while j < s.len() {
        let value = &s[j];
        let group = s[j..].iter().take_while(|x| *x == value).count();
        if group == 1 {
            cuts[j + 1] = lower(value);
        } else {
            let start = cuts[j];
            let end = s.get(j + group).map_or(len, &lower);
            let (run_lo, run_hi) = (lower(value), upper(value));
            let pieces = group + 1;
            let base = (end - start) / pieces;
            let extra = (end - start) % pieces;
            let mut pos = start;
            for i in 0..group {
                pos += base + usize::from(i < extra);
                cuts[j + 1 + i] = pos.clamp(run_lo, run_hi);
            }
        }
        j += group;
    }
    Ok(PartitionPlan { cuts })
}
