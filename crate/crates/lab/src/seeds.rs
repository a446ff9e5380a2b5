//! Seed derivation for experiment cells.

use sha2::{Digest, Sha256};

/// Human-readable statement of [`derive_seed`], copied into run manifests.
pub const SEED_RULE: &str = "seed = first 8 bytes (little endian) of SHA-256 over: base_seed (u64 LE), \
len(name) (u64 LE), name (UTF-8), len(coords) (u64 LE), each coordinate (u64 LE; floats as IEEE-754 bits), \
replicate (u64 LE)";

/// Stable 64-bit seed for `(base, name, coords, replicate)`.
pub fn derive_seed(base: u64, name: &str, coords: &[u64], replicate: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    h.update((coords.len() as u64).to_le_bytes());
    for c in coords {
        h.update(c.to_le_bytes());
    }
    h.update(replicate.to_le_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

/// A float coordinate as it enters [`derive_seed`].
pub fn coord(x: f64) -> u64 {
    x.to_bits()
}
