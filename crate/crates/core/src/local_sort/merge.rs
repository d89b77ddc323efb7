use std::sync::Arc;

use super::{LocalSortError, MergeSchedule};
use crate::memory::{footprint, Charge, MemoryMeter};

/// Two-way merge of sorted `left` and `right` into `out`.
pub fn merge_into<T: Copy + Ord>(left: &[T], right: &[T], out: &mut [T]) {
    debug_assert_eq!(left.len() + right.len(), out.len());
    let (mut i, mut j) = (0, 0);
    for slot in out.iter_mut() {
        // Ties take from the left run.
        if j >= right.len() || (i < left.len() && left[i] <= right[j]) {
            *slot = left[i];
            i += 1;
        } else {
            *slot = right[j];
            j += 1;
        }
    }
}

/// One unit of work in a merge round: `[lo, hi)` of the source buffer,
/// either merged at `mid` or copied through unchanged.
struct Task {
    lo: usize,
    mid: usize,
    hi: usize,
}

/// Merges adjacent sorted runs laid out back to back in `buf`.
///
/// `bounds` has `num_runs + 1` entries; run `i` is `buf[bounds[i]..bounds[i+1]]`.
/// Merges are out of place and ping-pong between `buf` and one scratch buffer
/// of the same length, which is charged to `meter` while alive.
pub(crate) fn merge_layout<T: Copy + Ord + Send + Sync>(
    buf: Vec<T>,
    bounds: &[usize],
    schedule: &MergeSchedule,
    threads: usize,
    meter: Option<&Arc<MemoryMeter>>,
) -> Result<Vec<T>, LocalSortError> {
    let runs = bounds.len().saturating_sub(1);
    if schedule.num_runs() != runs {
        return Err(LocalSortError::ScheduleMismatch {
            schedule: schedule.num_runs(),
            runs,
        });
    }
    if bounds.first() != Some(&0) || bounds.last() != Some(&buf.len()) {
        return Err(LocalSortError::BadBounds);
    }
    if bounds.windows(2).any(|w| w[0] > w[1]) {
        return Err(LocalSortError::BadBounds);
    }
    let tasks_per_round = plan_rounds(bounds, schedule)?;
    if buf.is_empty() || tasks_per_round.is_empty() {
        return Ok(buf);
    }

    let _scratch_charge = Charge::on(meter, footprint::<T>(buf.len()));
    let mut src = buf;
    let mut dst = vec![src[0]; src.len()];
    for tasks in &tasks_per_round {
        run_round(&src, &mut dst, tasks, threads);
        std::mem::swap(&mut src, &mut dst);
    }
    Ok(src)
}

/// Validates the schedule against the run layout and turns each round into
/// a left-to-right list of tasks covering the whole buffer.
fn plan_rounds(
    bounds: &[usize],
    schedule: &MergeSchedule,
) -> Result<Vec<Vec<Task>>, LocalSortError> {
    let runs = bounds.len() - 1;
    let mut end: Vec<usize> = bounds[1..].to_vec();
    let mut live = vec![true; runs];
    let mut out = Vec::with_capacity(schedule.rounds().len());
    for (round_idx, round) in schedule.rounds().iter().enumerate() {
        let mut partner = vec![None; runs];
        let mut used = vec![false; runs];
        for &(d, s) in round {
            let bad = LocalSortError::InvalidPair {
                round: round_idx,
                dest: d,
                merged: s,
            };
            if d >= runs || s >= runs || d >= s || used[d] || used[s] || !live[d] || !live[s] {
                return Err(bad);
            }
            // Only neighbouring live runs can be merged without moving others.
            if (d + 1..s).any(|k| live[k]) {
                return Err(bad);
            }
            used[d] = true;
            used[s] = true;
            partner[d] = Some(s);
        }
        let mut tasks = Vec::new();
        for i in 0..runs {
            if !live[i] {
                continue;
            }
            match partner[i] {
                Some(s) => {
                    tasks.push(Task {
                        lo: bounds[i],
                        mid: end[i],
                        hi: end[s],
                    });
                    end[i] = end[s];
                    live[s] = false;
                }
                None if used[i] => {}
                None => tasks.push(Task {
                    lo: bounds[i],
                    mid: end[i],
                    hi: end[i],
                }),
            }
        }
        out.push(tasks);
    }
    Ok(out)
}

/// `(left_len, right_len)` of every merge the schedule performs, per round,
/// for runs laid out at `bounds`. Copy-through carries are omitted.
pub(crate) fn merge_spans(
    bounds: &[usize],
    schedule: &MergeSchedule,
) -> Result<Vec<Vec<(usize, usize)>>, LocalSortError> {
    if schedule.num_runs() + 1 != bounds.len() {
        return Err(LocalSortError::ScheduleMismatch {
            schedule: schedule.num_runs(),
            runs: bounds.len().saturating_sub(1),
        });
    }
    Ok(plan_rounds(bounds, schedule)?
        .into_iter()
        .map(|tasks| {
            tasks
                .into_iter()
                .filter(|t| t.mid != t.hi)
                .map(|t| (t.mid - t.lo, t.hi - t.mid))
                .collect()
        })
        .collect())
}

fn run_round<T: Copy + Ord + Send + Sync>(
    src: &[T],
    dst: &mut [T],
    tasks: &[Task],
    threads: usize,
) {
    let mut jobs: Vec<(&Task, &mut [T])> = Vec::with_capacity(tasks.len());
    let mut rest = dst;
    let mut offset = 0;
    for task in tasks {
        let (head, tail) = std::mem::take(&mut rest).split_at_mut(task.hi - offset);
        debug_assert_eq!(task.lo, offset);
        jobs.push((task, head));
        rest = tail;
        offset = task.hi;
    }

    let exec = |task: &Task, out: &mut [T]| {
        if task.mid == task.hi {
            out.copy_from_slice(&src[task.lo..task.hi]);
        } else {
            merge_into(&src[task.lo..task.mid], &src[task.mid..task.hi], out);
        }
    };

    let merges = tasks.iter().filter(|t| t.mid != t.hi).count();
    if threads <= 1 || merges <= 1 {
        for (task, out) in jobs {
            exec(task, out);
        }
        return;
    }
    let per_thread = jobs.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let mut groups = Vec::new();
        while !jobs.is_empty() {
            let take = per_thread.min(jobs.len());
            groups.push(jobs.drain(..take).collect::<Vec<_>>());
        }
        let mut groups = groups.into_iter();
        let local = groups.next();
        for group in groups {
            scope.spawn(move || {
                for (task, out) in group {
                    exec(task, out);
                }
            });
        }
        for (task, out) in local.into_iter().flatten() {
            exec(task, out);
        }
    });
}
