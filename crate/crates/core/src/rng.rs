//! Deterministic random streams, one independent stream per named purpose.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Seed for the `index`-th member of a family of runs (e.g. sweep rows).
    pub fn offset(self, index: u64) -> Self {
        Self(self.0.wrapping_add(index))
    }
}

/// A ChaCha8 stream keyed by `SHA-256(seed || purpose)`, so streams for
/// different purposes never share state.
pub fn seeded_rng(seed: RngSeed, purpose: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"dcd-rng/v1");
    hasher.update(seed.0.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}
