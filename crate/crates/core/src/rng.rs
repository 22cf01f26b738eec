//! Counter-based seed derivation.
//!
//! Every random stream is keyed by `(seed, purpose, index)` and hashed with
//! SHA-256 into a ChaCha8 key, so streams for different purposes or indices
//! never overlap and any stream can be regenerated independently of the
//! others. This is what makes corpus generation, splitting and the
//! projection loop reproducible regardless of thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"novelwords/rng/v1";

pub const THETA: &str = "theta";
pub const CORPUS: &str = "corpus";
pub const SPLIT: &str = "split";
pub const PROJECTION: &str = "projection";
pub const TRIAL: &str = "trial";

pub fn derive_key(seed: u64, purpose: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN);
    hasher.update(seed.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

/// Independent RNG stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_key(seed, purpose, index))
}

/// Child seed, used to hand a fresh top-level seed to a sub-computation.
pub fn child_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    let key = derive_key(seed, purpose, index);
    u64::from_le_bytes(key[..8].try_into().expect("32-byte key"))
}
