//! Introspective quicksort: median-of-three pivots, insertion sort below a
//! cutoff, heapsort once recursion gets too deep.

/// Slices at or below this length are finished with insertion sort.
pub const INSERTION_CUTOFF: usize = 32;

pub fn quicksort<T: Copy + Ord>(v: &mut [T]) {
    if v.len() < 2 {
        return;
    }
    let depth = 2 * (usize::BITS - v.len().leading_zeros()) as usize;
    sort_rec(v, depth);
}

fn sort_rec<T: Copy + Ord>(mut v: &mut [T], mut depth: usize) {
    loop {
        let len = v.len();
        if len <= INSERTION_CUTOFF {
            insertion_sort(v);
            return;
        }
        if depth == 0 {
            heapsort(v);
            return;
        }
        depth -= 1;

        let split = hoare_partition(v);
        // Recurse into the smaller half, iterate on the larger one.
        let (left, right) = v.split_at_mut(split + 1);
        if left.len() < right.len() {
            sort_rec(left, depth);
            v = right;
        } else {
            sort_rec(right, depth);
            v = left;
        }
    }
}

/// Orders `v[0]`, `v[mid]`, `v[len-1]` and partitions around the median.
/// Returns `j` with `v[..=j] <= pivot <= v[j+1..]` and `j < len - 1`.
fn hoare_partition<T: Copy + Ord>(v: &mut [T]) -> usize {
    let len = v.len();
    let mid = len / 2;
    let last = len - 1;
    if v[mid] < v[0] {
        v.swap(mid, 0);
    }
    if v[last] < v[0] {
        v.swap(last, 0);
    }
    if v[last] < v[mid] {
        v.swap(last, mid);
    }
    let pivot = v[mid];

    // v[0] <= pivot <= v[last] act as sentinels for the inner scans.
    let mut i = 0usize;
    let mut j = last;
    loop {
        while v[i] < pivot {
            i += 1;
        }
        while v[j] > pivot {
            j -= 1;
        }
        if i >= j {
            return j.min(last - 1);
        }
        v.swap(i, j);
        i += 1;
        j -= 1;
    }
}

pub fn insertion_sort<T: Copy + Ord>(v: &mut [T]) {
    for i in 1..v.len() {
        let item = v[i];
        let mut j = i;
        while j > 0 && item < v[j - 1] {
            v[j] = v[j - 1];
            j -= 1;
        }
        v[j] = item;
    }
}

fn heapsort<T: Copy + Ord>(v: &mut [T]) {
    fn sift_down<T: Copy + Ord>(v: &mut [T], mut node: usize) {
        loop {
            let mut child = 2 * node + 1;
            if child >= v.len() {
                break;
            }
            if child + 1 < v.len() && v[child] < v[child + 1] {
                child += 1;
            }
            if v[node] >= v[child] {
                break;
            }
            v.swap(node, child);
            node = child;
        }
    }

    for i in (0..v.len() / 2).rev() {
        sift_down(v, i);
    }
    for end in (1..v.len()).rev() {
        v.swap(0, end);
        sift_down(&mut v[..end], 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matches_std_sort(mut v in proptest::collection::vec(-50i32..50, 0..600)) {
            let mut expected = v.clone();
            expected.sort();
            quicksort(&mut v);
            prop_assert_eq!(v, expected);
        }
    }

    #[test]
    fn adversarial_inputs() {
        let n = 50_000i64;
        let inputs: Vec<Vec<i64>> = vec![
            (0..n).collect(),
            (0..n).rev().collect(),
            vec![7; n as usize],
            (0..n).map(|i| i % 3).collect(),
            (0..n).map(|i| if i % 2 == 0 { i } else { n - i }).collect(),
        ];
        for mut v in inputs {
            let mut expected = v.clone();
            expected.sort_unstable();
            quicksort(&mut v);
            assert_eq!(v, expected);
        }
    }

    #[test]
    fn heapsort_fallback_sorts() {
        let mut v: Vec<u32> = (0..1000u32)
            .map(|i| i.wrapping_mul(2654435761) % 977)
            .collect();
        let mut expected = v.clone();
        expected.sort();
        heapsort(&mut v);
        assert_eq!(v, expected);
    }
}
