//! Platform-independent seed derivation.

use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from a sequence of labels. Parts are length-prefixed
/// so `["ab", "c"]` and `["a", "bc"]` differ.
pub fn stable_seed(parts: &[&str]) -> u64 {
    let digest = digest_parts(parts);
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Hex SHA-256 over length-prefixed parts.
pub fn stable_hex(parts: &[&str]) -> String {
    hex::encode(digest_parts(parts))
}

fn digest_parts(parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().into()
}
