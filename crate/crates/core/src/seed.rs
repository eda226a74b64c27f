//! Seed derivation.
//!
//! Every random stream in a run is derived from a single master seed and a
//! path-like label: `derive(master, "fold2/stage1")` is the first eight bytes
//! (little-endian) of `SHA-256(master.to_le_bytes() || label)`. Adding a new
//! labelled stream never changes the value of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, label: &str) -> Rng {
    rng(derive(master, label))
}
