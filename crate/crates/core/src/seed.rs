//! Deterministic seed derivation. All randomness in the pipeline flows from
//! one root seed; each component derives its own stream by hashing the root
//! with a label, so adding a consumer never perturbs existing streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// `seed = first 8 LE bytes of SHA-256(root_le_bytes || 0x00 || label)`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest >= 8 bytes"))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(root: u64, label: &str) -> ChaCha8Rng {
    rng_from_seed(derive_seed(root, label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_label_sensitive() {
        let a = derive_seed(7, "synth");
        assert_eq!(a, derive_seed(7, "synth"));
        assert_ne!(a, derive_seed(7, "mask"));
        assert_ne!(a, derive_seed(8, "synth"));
    }

    #[test]
    fn rng_streams_reproducible() {
        use rand_chacha::rand_core::RngCore;
        let mut r1 = rng_for(42, "x");
        let mut r2 = rng_for(42, "x");
        for _ in 0..8 {
            assert_eq!(r1.next_u64(), r2.next_u64());
        }
    }
}
