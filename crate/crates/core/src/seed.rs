//! Deterministic seed derivation so that every random consumer draws from
//! its own stream.

use sha2::{Digest, Sha256};

/// Mixes a root seed with a label into an independent 64-bit seed.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
