use serde::{Deserialize, Serialize};

use crate::key::Wire;

/// A key tagged with where it came from.
///
/// Ordering is by key, then origin, so every record in a cluster is distinct
/// and the sorted output is the same on every run and backend.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Record<K> {
    pub key: K,
    pub origin_worker: u32,
    pub origin_index: u64,
}

impl<K> Record<K> {
    pub fn new(key: K, origin_worker: usize, origin_index: usize) -> Self {
        Self {
            key,
            origin_worker: origin_worker as u32,
            origin_index: origin_index as u64,
        }
    }

    pub fn origin(&self) -> (usize, usize) {
        (self.origin_worker as usize, self.origin_index as usize)
    }
}

impl<K: Wire> Wire for Record<K> {
    const SIZE: usize = K::SIZE + 12;

    fn encode(&self, out: &mut [u8]) {
        self.key.encode(&mut out[..K::SIZE]);
        out[K::SIZE..K::SIZE + 4].copy_from_slice(&self.origin_worker.to_le_bytes());
        out[K::SIZE + 4..K::SIZE + 12].copy_from_slice(&self.origin_index.to_le_bytes());
    }

    fn decode(bytes: &[u8]) -> Self {
        Self {
            key: K::decode(&bytes[..K::SIZE]),
            origin_worker: u32::from_le_bytes(bytes[K::SIZE..K::SIZE + 4].try_into().unwrap()),
            origin_index: u64::from_le_bytes(bytes[K::SIZE + 4..K::SIZE + 12].try_into().unwrap()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::key::{decode_all, encode_all};

    #[test]
    fn wire_roundtrip() {
        let recs = vec![
            Record::new(-5i64, 3, 7),
            Record::new(i64::MAX, 0, u32::MAX as usize + 9),
        ];
        let bytes = encode_all(&recs);
        assert_eq!(bytes.len(), 2 * 20);
        assert_eq!(decode_all::<Record<i64>>(&bytes), recs);
    }

    #[test]
    fn orders_by_key_first() {
        assert!(Record::new(1i64, 9, 9) < Record::new(2i64, 0, 0));
        assert!(Record::new(1i64, 0, 5) < Record::new(1i64, 1, 0));
    }
}
