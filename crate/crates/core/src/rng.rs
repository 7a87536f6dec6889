//! Deterministic, splittable random streams.
//!
//! Every stochastic operation in this crate derives its own stream from an
//! explicit `(seed, tag, index)` key instead of sharing mutable RNG state.
//! Streams are therefore independent of iteration order, safe to draw from
//! concurrently, and bit-reproducible across runs and platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a 32-byte ChaCha key from `(seed, tag, index)`.
fn key(seed: u64, tag: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0x1f]); // domain separator between fields
    hasher.update(tag.as_bytes());
    hasher.update([0x1f]);
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

/// A random stream for the given key. Each distinct key yields an
/// independent stream.
pub fn stream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(key(seed, tag, index))
}

/// Derive a sub-seed, e.g. one seed per input file in a batch command.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let k = key(seed, tag, index);
    u64::from_le_bytes(k[..8].try_into().unwrap())
}

/// Derive a sub-seed keyed by a string identifier (stable under reordering
/// of the batch).
pub fn derive_seed_str(seed: u64, tag: &str, id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(tag.as_bytes());
    hasher.update([0x1f]);
    hasher.update(id.as_bytes());
    let k: [u8; 32] = hasher.finalize().into();
    u64::from_le_bytes(k[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible() {
        let mut a = stream(7, "test", 0);
        let mut b = stream(7, "test", 0);
        for _ in 0..100 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn distinct_keys_give_distinct_streams() {
        let a: u64 = stream(7, "test", 0).random();
        let b: u64 = stream(7, "test", 1).random();
        let c: u64 = stream(7, "other", 0).random();
        let d: u64 = stream(8, "test", 0).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn derive_seed_is_stable() {
        assert_eq!(derive_seed(1, "x", 2), derive_seed(1, "x", 2));
        assert_ne!(derive_seed(1, "x", 2), derive_seed(1, "x", 3));
        assert_eq!(derive_seed_str(1, "x", "a"), derive_seed_str(1, "x", "a"));
        assert_ne!(derive_seed_str(1, "x", "a"), derive_seed_str(1, "x", "b"));
    }
}
