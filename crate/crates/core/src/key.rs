//! Fixed-width serialization for everything that crosses a worker boundary.

use std::fmt::Debug;

/// A value with a fixed-size little-endian encoding.
pub trait Wire: Copy + Send + Sync + 'static {
    /// Encoded size in bytes.
    const SIZE: usize;

    /// Writes exactly `SIZE` bytes into the front of `out`.
    fn encode(&self, out: &mut [u8]);

    /// Reads a value from the first `SIZE` bytes of `bytes`.
    fn decode(bytes: &[u8]) -> Self;
}

/// A key the distributed sorter can order and ship between workers.
pub trait SortKey: Wire + Ord + Debug + Default {}

impl<T: Wire + Ord + Debug + Default> SortKey for T {}

macro_rules! wire_int {
    ($($t:ty),*) => {$(
        impl Wire for $t {
            const SIZE: usize = std::mem::size_of::<$t>();

            #[inline]
            fn encode(&self, out: &mut [u8]) {
                out[..Self::SIZE].copy_from_slice(&self.to_le_bytes());
            }

            #[inline]
            fn decode(bytes: &[u8]) -> Self {
                let mut raw = [0u8; std::mem::size_of::<$t>()];
                raw.copy_from_slice(&bytes[..Self::SIZE]);
                <$t>::from_le_bytes(raw)
            }
        }
    )*};
}

wire_int!(i32, u32, i64, u64);

/// Pairs encode as the concatenation of both halves and order lexicographically.
impl<A: Wire, B: Wire> Wire for (A, B) {
    const SIZE: usize = A::SIZE + B::SIZE;

    #[inline]
    fn encode(&self, out: &mut [u8]) {
        self.0.encode(&mut out[..A::SIZE]);
        self.1.encode(&mut out[A::SIZE..Self::SIZE]);
    }

    #[inline]
    fn decode(bytes: &[u8]) -> Self {
        (
            A::decode(&bytes[..A::SIZE]),
            B::decode(&bytes[A::SIZE..Self::SIZE]),
        )
    }
}

/// Encodes a slice of values back to back.
pub fn encode_all<T: Wire>(values: &[T]) -> Vec<u8> {
    let mut out = vec![0u8; values.len() * T::SIZE];
    for (value, chunk) in values.iter().zip(out.chunks_exact_mut(T::SIZE.max(1))) {
        value.encode(chunk);
    }
    out
}

/// Decodes a buffer produced by [`encode_all`]; trailing partial values are ignored.
pub fn decode_all<T: Wire>(bytes: &[u8]) -> Vec<T> {
    bytes.chunks_exact(T::SIZE.max(1)).map(T::decode).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pair_keys_roundtrip(values in proptest::collection::vec((any::<i64>(), any::<u32>()), 0..64)) {
            let bytes = encode_all(&values);
            prop_assert_eq!(bytes.len(), values.len() * 12);
            prop_assert_eq!(decode_all::<(i64, u32)>(&bytes), values);
        }
    }

    #[test]
    fn little_endian_layout() {
        let mut buf = [0u8; 8];
        0x0102_0304_0506_0708i64.encode(&mut buf);
        assert_eq!(buf, [8, 7, 6, 5, 4, 3, 2, 1]);
    }
}
