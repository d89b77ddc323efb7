//! Per-worker parallel sort: equal chunks per thread, quicksort each chunk,
//! then merge the chunks pairwise with the balanced stride-doubling schedule.

mod merge;
mod quicksort;
mod schedule;

use std::sync::Arc;

use thiserror::Error;

pub use merge::merge_into;
pub use quicksort::{insertion_sort, quicksort, INSERTION_CUTOFF};
pub use schedule::{merge_schedule, MergeSchedule};

use crate::memory::MemoryMeter;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LocalSortError {
    #[error("a merge schedule needs at least one run")]
    EmptyInput,
    #[error("schedule is for {schedule} runs but {runs} were given")]
    ScheduleMismatch { schedule: usize, runs: usize },
    #[error("round {round}: cannot merge run {merged} into run {dest}")]
    InvalidPair {
        round: usize,
        dest: usize,
        merged: usize,
    },
    #[error("run boundaries do not partition the buffer")]
    BadBounds,
    #[error("run {0} is not sorted")]
    UnsortedRun(usize),
}

/// A sorted span produced by one thread.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SortedRun<T> {
    pub data: Vec<T>,
    pub thread_id: usize,
}

/// `parts + 1` boundaries splitting `len` items into chunks whose sizes
/// differ by at most one.
pub fn chunk_bounds(len: usize, parts: usize) -> Vec<usize> {
    let parts = parts.max(1);
    (0..=parts).map(|i| i * len / parts).collect()
}

/// Thread count plus optional accounting for the merge scratch buffer.
#[derive(Clone, Debug)]
pub struct LocalSorter {
    threads: usize,
    meter: Option<Arc<MemoryMeter>>,
}

impl LocalSorter {
    pub fn new(threads: usize) -> Self {
        Self {
            threads: threads.max(1),
            meter: None,
        }
    }

    pub fn with_meter(mut self, meter: Arc<MemoryMeter>) -> Self {
        self.meter = Some(meter);
        self
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// Sorts `data` with one quicksort per thread chunk followed by the
    /// balanced merge.
    pub fn sort<T: Copy + Ord + Send + Sync>(&self, mut data: Vec<T>) -> Vec<T> {
        let parts = self.threads.min(data.len()).max(1);
        let bounds = chunk_bounds(data.len(), parts);
        if parts == 1 {
            quicksort(&mut data);
            return data;
        }

        std::thread::scope(|scope| {
            let mut rest = data.as_mut_slice();
            let mut chunks = Vec::with_capacity(parts);
            for w in bounds.windows(2) {
                let (head, tail) = std::mem::take(&mut rest).split_at_mut(w[1] - w[0]);
                chunks.push(head);
                rest = tail;
            }
            let mut chunks = chunks.into_iter();
            let first = chunks.next();
            for chunk in chunks {
                scope.spawn(move || quicksort(chunk));
            }
            if let Some(chunk) = first {
                quicksort(chunk);
            }
        });

        let schedule = merge_schedule(parts).expect("parts >= 1");
        self.merge_layout(data, &bounds, &schedule)
            .expect("chunk layout always matches its own schedule")
    }

    /// Merges back-to-back sorted runs delimited by `bounds` (see [`merge_runs`]).
    pub fn merge_layout<T: Copy + Ord + Send + Sync>(
        &self,
        buf: Vec<T>,
        bounds: &[usize],
        schedule: &MergeSchedule,
    ) -> Result<Vec<T>, LocalSortError> {
        merge::merge_layout(buf, bounds, schedule, self.threads, self.meter.as_ref())
    }
}

/// Sizes of the two spans combined by each merge, per round, for runs of the
/// given lengths.
pub fn merge_spans(
    run_lengths: &[usize],
    schedule: &MergeSchedule,
) -> Result<Vec<Vec<(usize, usize)>>, LocalSortError> {
    let mut bounds = vec![0];
    for len in run_lengths {
        bounds.push(bounds.last().unwrap() + len);
    }
    merge::merge_spans(&bounds, schedule)
}

/// Sorts with `threads` equal chunks; `threads == 1` is a plain quicksort.
pub fn parallel_local_sort<T: Copy + Ord + Send + Sync>(data: Vec<T>, threads: usize) -> Vec<T> {
    LocalSorter::new(threads).sort(data)
}

/// Merges sorted runs following `schedule`. Pairs within a round run
/// concurrently, one thread per pair.
pub fn merge_runs<T: Copy + Ord + Send + Sync>(
    runs: Vec<SortedRun<T>>,
    schedule: &MergeSchedule,
) -> Result<Vec<T>, LocalSortError> {
    if schedule.num_runs() != runs.len() {
        return Err(LocalSortError::ScheduleMismatch {
            schedule: schedule.num_runs(),
            runs: runs.len(),
        });
    }
    if let Some(bad) = runs.iter().position(|r| !r.data.is_sorted()) {
        return Err(LocalSortError::UnsortedRun(bad));
    }
    let mut bounds = Vec::with_capacity(runs.len() + 1);
    bounds.push(0);
    let total = runs.iter().map(|r| r.data.len()).sum();
    let mut buf = Vec::with_capacity(total);
    for run in &runs {
        buf.extend_from_slice(&run.data);
        bounds.push(buf.len());
    }
    LocalSorter::new(runs.len()).merge_layout(buf, &bounds, schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_keys(n: usize, seed: u64) -> Vec<i64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0..1i64 << 32)).collect()
    }

    #[test]
    fn empty_input() {
        assert!(parallel_local_sort(Vec::<i64>::new(), 4).is_empty());
    }

    #[test]
    fn single_thread() {
        assert_eq!(parallel_local_sort(vec![3, 1, 2], 1), vec![1, 2, 3]);
    }

    #[test]
    fn matches_reference_sort() {
        let keys = random_keys(100_000, 1);
        let mut reference = keys.clone();
        reference.sort();
        assert_eq!(parallel_local_sort(keys, 8), reference);
    }

    #[test]
    fn chunk_sizes_differ_by_at_most_one() {
        for len in [0usize, 1, 7, 100, 1001] {
            for parts in 1..=9 {
                let b = chunk_bounds(len, parts);
                let sizes: Vec<_> = b.windows(2).map(|w| w[1] - w[0]).collect();
                let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                assert!(hi - lo <= 1);
                assert_eq!(sizes.iter().sum::<usize>(), len);
            }
        }
    }

    #[test]
    fn merge_two_runs() {
        let runs = vec![
            SortedRun {
                data: vec![1, 3],
                thread_id: 0,
            },
            SortedRun {
                data: vec![2, 4],
                thread_id: 1,
            },
        ];
        assert_eq!(
            merge_runs(runs, &merge_schedule(2).unwrap()).unwrap(),
            vec![1, 2, 3, 4]
        );
    }

    #[test]
    fn eight_uniform_runs_match_reference() {
        let keys = random_keys(80_000, 2);
        let runs: Vec<_> = keys
            .chunks(10_000)
            .enumerate()
            .map(|(i, c)| {
                let mut data = c.to_vec();
                data.sort();
                SortedRun { data, thread_id: i }
            })
            .collect();
        let mut reference = keys.clone();
        reference.sort();
        assert_eq!(
            merge_runs(runs, &merge_schedule(8).unwrap()).unwrap(),
            reference
        );
    }

    #[test]
    fn mismatched_schedule() {
        let runs = vec![SortedRun {
            data: vec![1],
            thread_id: 0,
        }];
        assert_eq!(
            merge_runs(runs, &merge_schedule(2).unwrap()),
            Err(LocalSortError::ScheduleMismatch {
                schedule: 2,
                runs: 1
            })
        );
    }

    #[test]
    fn unsorted_run_rejected() {
        let runs = vec![
            SortedRun {
                data: vec![2, 1],
                thread_id: 0,
            },
            SortedRun {
                data: vec![3],
                thread_id: 1,
            },
        ];
        assert_eq!(
            merge_runs(runs, &merge_schedule(2).unwrap()),
            Err(LocalSortError::UnsortedRun(0))
        );
    }

    #[test]
    fn scratch_is_charged_once() {
        let meter = MemoryMeter::new();
        let sorter = LocalSorter::new(4).with_meter(meter.clone());
        let out = sorter.sort(random_keys(4000, 3));
        assert!(out.is_sorted());
        assert_eq!(meter.peak(), 4000 * 8);
        assert_eq!(meter.current(), 0);
    }

    proptest! {
        #[test]
        fn sort_is_a_sorted_permutation(
            keys in proptest::collection::vec(-1000i64..1000, 0..2000),
            threads in 1usize..12,
        ) {
            let mut reference = keys.clone();
            reference.sort();
            prop_assert_eq!(parallel_local_sort(keys, threads), reference);
        }
    }
}
