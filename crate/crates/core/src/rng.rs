//! Seed derivation. Every randomized step draws from its own ChaCha stream
//! whose seed is a stable hash of the master seed and the episode identity,
//! so results do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Sub-seed for `(patient_id, episode_id)` under `master`, salted by `stream`
/// so different uses of one episode stay independent.
pub fn derive_seed(master: u64, stream: &str, patient_id: &str, episode_id: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(stream.as_bytes());
    hasher.update([0u8]);
    hasher.update(patient_id.as_bytes());
    hasher.update([0u8]);
    hasher.update((episode_id as u64).to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
