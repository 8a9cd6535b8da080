//! Named sub-seeds derived from a single run seed.

use sha2::{Digest, Sha256};

/// A seed for the stream called `name` under `base`. Different names give
/// unrelated streams; the same (base, name) always gives the same seed.
pub fn derive_seed(base: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
