//! Stable seed derivation.
//!
//! Every random stream in a run is derived from the run seed plus a label, so
//! that parallel or reordered work still sees the same numbers. The mixing is
//! SHA-256 based and therefore stable across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// `hash(run_seed, epoch, id)` folded to 64 bits.
pub fn derive_seed(run_seed: u64, epoch: u64, id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(run_seed.to_le_bytes());
    hasher.update(epoch.to_le_bytes());
    hasher.update((id.len() as u64).to_le_bytes());
    hasher.update(id.as_bytes());
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

pub fn rng_for(run_seed: u64, epoch: u64, id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(run_seed, epoch, id))
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
