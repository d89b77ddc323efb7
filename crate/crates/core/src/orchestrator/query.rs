use thiserror::Error;

use super::SortedPartition;
use crate::key::SortKey;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("no worker {worker} (cluster has {workers})")]
    NoSuchWorker { worker: usize, workers: usize },
    #[error("index {index} out of range for worker {worker} holding {len} records")]
    OutOfRange {
        worker: usize,
        index: usize,
        len: usize,
    },
}

/// Global lower bound: the first `(worker_id, local_index)` whose key is
/// `>= key`, or `None` if every key is smaller.
///
/// Binary search over the workers' key ranges picks the worker, then a
/// second binary search runs inside it. Empty partitions are skipped.
pub fn global_find<K: SortKey>(
    partitions: &[SortedPartition<K>],
    key: &K,
) -> Option<(usize, usize)> {
    let filled: Vec<(usize, K)> = partitions
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.key_range.map(|(_, max)| (i, max)))
        .collect();
    let at = filled.partition_point(|(_, max)| max < key);
    let &(worker, _) = filled.get(at)?;
    let index = partitions[worker].records.partition_point(|r| r.key < *key);
    Some((worker, index))
}

/// Where the record at `partitions[worker].records[index]` came from.
pub fn origin_of<K>(
    partitions: &[SortedPartition<K>],
    worker: usize,
    index: usize,
) -> Result<(usize, usize), QueryError> {
    let part = partitions.get(worker).ok_or(QueryError::NoSuchWorker {
        worker,
        workers: partitions.len(),
    })?;
    let rec = part.records.get(index).ok_or(QueryError::OutOfRange {
        worker,
        index,
        len: part.records.len(),
    })?;
    Ok(rec.origin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::Record;

    fn parts(groups: &[&[i64]]) -> Vec<SortedPartition<i64>> {
        groups
            .iter()
            .enumerate()
            .map(|(w, keys)| {
                SortedPartition::new(
                    w,
                    keys.iter()
                        .enumerate()
                        .map(|(i, &k)| Record::new(k, w, i))
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn below_above_and_between() {
        let p = parts(&[&[1, 3], &[], &[5, 5, 8]]);
        assert_eq!(global_find(&p, &0), Some((0, 0)));
        assert_eq!(global_find(&p, &4), Some((2, 0)));
        assert_eq!(global_find(&p, &6), Some((2, 2)));
        assert_eq!(global_find(&p, &9), None);
    }

    #[test]
    fn origin_bounds() {
        let p = parts(&[&[1, 3]]);
        assert_eq!(origin_of(&p, 0, 1), Ok((0, 1)));
        assert_eq!(
            origin_of(&p, 0, 2),
            Err(QueryError::OutOfRange {
                worker: 0,
                index: 2,
                len: 2
            })
        );
        assert!(matches!(
            origin_of(&p, 1, 0),
            Err(QueryError::NoSuchWorker { .. })
        ));
    }
}
