//! Seeded random number generation.
//!
//! All simulation uses ChaCha8, a counter-based generator: a `(seed, stream)`
//! pair addresses an independent keystream, so samplers that must not share
//! draws (for instance the naive and the fast graph sampler) select different
//! streams of the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_with_stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable seed for replica `index` of task `task_id` under `master_seed`.
///
/// SHA-256 over the little-endian seed, the task id bytes and the index; the
/// first eight digest bytes form the result. Independent of platform, thread
/// count and execution order.
pub fn derive_seed(master_seed: u64, task_id: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update((task_id.len() as u64).to_le_bytes());
    hasher.update(task_id.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
