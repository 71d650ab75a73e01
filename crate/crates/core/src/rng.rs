//! Deterministic random-stream derivation.
//!
//! Every consumer of randomness derives its own ChaCha8 stream from a
//! master seed, a purpose string, and a list of indices. The key is
//! SHA-256 over a fixed domain tag, the little-endian master seed, the
//! purpose bytes, and the little-endian indices, so streams for different
//! purposes or replication indices are statistically independent and the
//! result never depends on thread scheduling or evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const DOMAIN_TAG: &[u8] = b"covshift-stream-v1";

/// Derive an independent stream for `(master, purpose, indices)`.
pub fn derive_rng(master: u64, purpose: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN_TAG);
    hasher.update(master.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(purpose.as_bytes());
    for ix in indices {
        hasher.update([0x1f]);
        hasher.update(ix.to_le_bytes());
    }
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}
