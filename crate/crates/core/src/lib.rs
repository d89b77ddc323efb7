//! Load-balanced distributed sample sort.
//!
//! Each worker sorts its input locally with several threads, contributes
//! regular samples to the master, receives `p - 1` splitters, partitions its
//! sorted data and exchanges the pieces so that worker `i` ends up with the
//! `i`-th slice of the global order. Equal keys are spread over several
//! workers instead of piling up on one.

pub mod datagen;
pub mod key;
pub mod local_sort;
pub mod memory;
pub mod orchestrator;
pub mod partition;
pub mod transport;

pub use key::{SortKey, Wire};
pub use orchestrator::{
    distributed_sort, global_find, multi_sort, origin_of, run_worker, ClusterConfig, Phase, Record,
    SortError, SortOutput, SortReport, SortedPartition, WorkerStats,
};
