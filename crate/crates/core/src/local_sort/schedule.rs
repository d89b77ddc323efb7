use serde::{Deserialize, Serialize};

use super::LocalSortError;

/// Pairwise merge plan over `num_runs` adjacent sorted runs.
///
/// Round `k` (1-based) merges run `i + 2^(k-1)` into run `i` for every `i`
/// that is a multiple of `2^k`. A run without a partner in a round is carried
/// into the next one untouched. After the last round only run 0 remains.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeSchedule {
    num_runs: usize,
    rounds: Vec<Vec<(usize, usize)>>,
}

impl MergeSchedule {
    pub fn num_runs(&self) -> usize {
        self.num_runs
    }

    /// `(destination_run, source_run)` pairs, one list per round.
    pub fn rounds(&self) -> &[Vec<(usize, usize)>] {
        &self.rounds
    }
}

pub fn merge_schedule(num_runs: usize) -> Result<MergeSchedule, LocalSortError> {
    if num_runs == 0 {
        return Err(LocalSortError::EmptyInput);
    }
    let mut rounds = Vec::new();
    let mut half = 1usize;
    while half < num_runs {
        let stride = half * 2;
        let pairs = (0..num_runs)
            .step_by(stride)
            .filter(|&dest| dest + half < num_runs)
            .map(|dest| (dest, dest + half))
            .collect();
        rounds.push(pairs);
        half = stride;
    }
    Ok(MergeSchedule { num_runs, rounds })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Replays a schedule over run ownership sets; independent of the merge code.
    fn absorbs_everything(schedule: &MergeSchedule) -> bool {
        let n = schedule.num_runs();
        let mut owned: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
        for round in schedule.rounds() {
            let mut seen = std::collections::HashSet::new();
            for &(d, s) in round {
                if !seen.insert(d) || !seen.insert(s) {
                    return false;
                }
                let taken = owned[s].take().expect("source already absorbed");
                owned[d]
                    .as_mut()
                    .expect("destination absorbed")
                    .extend(taken);
            }
        }
        let mut all = owned[0].clone().unwrap();
        all.sort();
        all == (0..n).collect::<Vec<_>>() && owned[1..].iter().all(Option::is_none)
    }

    #[test]
    fn eight_threads() {
        let s = merge_schedule(8).unwrap();
        assert_eq!(
            s.rounds(),
            &[
                vec![(0, 1), (2, 3), (4, 5), (6, 7)],
                vec![(0, 2), (4, 6)],
                vec![(0, 4)],
            ]
        );
    }

    #[test]
    fn single_run_has_no_rounds() {
        assert!(merge_schedule(1).unwrap().rounds().is_empty());
    }

    #[test]
    fn five_runs() {
        let s = merge_schedule(5).unwrap();
        assert_eq!(s.rounds().len(), 3);
        assert!(absorbs_everything(&s));
        assert_eq!(s.rounds()[0], vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn zero_runs_is_an_error() {
        assert_eq!(merge_schedule(0), Err(LocalSortError::EmptyInput));
    }

    #[test]
    fn round_count_is_ceil_log2() {
        for n in 1..=200usize {
            let s = merge_schedule(n).unwrap();
            let expected = (n as f64).log2().ceil() as usize;
            assert_eq!(s.rounds().len(), expected, "n = {n}");
            assert!(absorbs_everything(&s), "n = {n}");
        }
    }
}
