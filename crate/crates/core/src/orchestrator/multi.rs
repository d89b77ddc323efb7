use std::sync::{Arc, Mutex};

use super::{distributed_sort, ClusterConfig, SortError, SortOutput};
use crate::key::SortKey;

type Slot<K> = Arc<Mutex<Option<Result<SortOutput<K>, SortError>>>>;

type Job<'a> = Box<dyn FnOnce(&ClusterConfig) + Send + 'a>;

/// Several independent sorts, possibly over different key types, run at
/// the same time. Each dataset gets its own cluster.
pub struct MultiSort<'a> {
    config: ClusterConfig,
    jobs: Vec<Job<'a>>,
}

/// Where one dataset's result appears once [`MultiSort::run`] returns.
#[derive(Debug)]
pub struct JobHandle<K> {
    slot: Slot<K>,
}

impl<K> JobHandle<K> {
    /// The dataset's result. Panics if the batch has not been run.
    pub fn into_result(self) -> Result<SortOutput<K>, SortError> {
        self.slot
            .lock()
            .unwrap()
            .take()
            .expect("MultiSort::run has not completed")
    }
}

impl<'a> MultiSort<'a> {
    pub fn new(config: ClusterConfig) -> Self {
        Self {
            config,
            jobs: Vec::new(),
        }
    }

    pub fn add<K: SortKey>(&mut self, inputs: &'a [Vec<K>]) -> JobHandle<K> {
        let slot: Slot<K> = Arc::default();
        let out = Arc::clone(&slot);
        self.jobs.push(Box::new(move |config| {
            *out.lock().unwrap() = Some(distributed_sort(config, inputs));
        }));
        JobHandle { slot }
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn run(self) {
        let config = &self.config;
        std::thread::scope(|scope| {
            for job in self.jobs {
                scope.spawn(move || job(config));
            }
        });
    }
}

/// Sorts each dataset independently and concurrently; results are in input order.
pub fn multi_sort<K: SortKey>(
    config: &ClusterConfig,
    datasets: &[Vec<Vec<K>>],
) -> Vec<Result<SortOutput<K>, SortError>> {
    let mut batch = MultiSort::new(config.clone());
    let handles: Vec<_> = datasets.iter().map(|d| batch.add(d)).collect();
    batch.run();
    handles.into_iter().map(JobHandle::into_result).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_datasets() {
        assert!(multi_sort::<i64>(&ClusterConfig::new(2), &[]).is_empty());
    }

    #[test]
    fn errors_stay_with_their_dataset() {
        let good = vec![vec![4i64, 2], vec![3, 1]];
        let bad = vec![vec![1i64]];
        let out = multi_sort(&ClusterConfig::new(2), &[good, bad]);
        assert_eq!(out[0].as_ref().unwrap().keys(), vec![1, 2, 3, 4]);
        assert!(out[1].is_err());
    }
}
