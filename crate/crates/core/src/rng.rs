//! Seed derivation.
//!
//! Every component draws from its own stream: the seed for component `label`
//! under root seed `root` is the first 8 bytes (little endian) of
//! `SHA-256(root.to_le_bytes() || label)`. Streams never share state, so
//! adding a component leaves every other component's draws unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(root: u64, label: &str) -> Rng {
    rng_from_seed(derive_seed(root, label))
}
