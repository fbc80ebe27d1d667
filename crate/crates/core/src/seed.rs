//! Named, derived random streams.
//!
//! Every random decision in the toolkit draws from a `ChaCha8Rng` whose seed
//! is derived from a global seed plus a stream tag and integer coordinates, so
//! work units (a sample in an epoch, a view of an image) can be replayed in
//! isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive_seed(base: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn stream(base: u64, tag: &str, parts: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, parts))
}

/// Stable 64-bit id for a string (video ids feed into derived seeds).
pub fn string_id(s: &str) -> u64 {
    derive_seed(0, s, &[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derived_streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, "epoch", &[1, 2]).random();
        let b: u64 = stream(7, "epoch", &[1, 2]).random();
        let c: u64 = stream(7, "epoch", &[2, 1]).random();
        let d: u64 = stream(7, "epochs", &[1, 2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
