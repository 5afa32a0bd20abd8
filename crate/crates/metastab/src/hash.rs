//! Content hashing for reproducibility checks and run manifests.

use sha2::{Digest, Sha256};

/// Hex SHA-256 of raw bytes.
pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex(&hasher.finalize())
}

/// Hex SHA-256 over the little-endian bit patterns of float slices.
pub fn hash_f64_slices(slices: &[&[f64]]) -> String {
    let mut hasher = Sha256::new();
    for s in slices {
        hasher.update((s.len() as u64).to_le_bytes());
        for v in *s {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hex(&hasher.finalize())
}

fn hex(digest: &[u8]) -> String {
    let mut out = String::with_capacity(digest.len() * 2);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_sensitive() {
        let a = hash_f64_slices(&[&[1.0, 2.0]]);
        let b = hash_f64_slices(&[&[1.0, 2.0]]);
        let c = hash_f64_slices(&[&[1.0, 2.0 + 1e-16]]);
        let d = hash_f64_slices(&[&[1.0], &[2.0]]);
        assert_eq!(a, b);
        assert_eq!(a, c); // 2.0 + 1e-16 rounds to the same f64
        assert_ne!(a, d); // slice boundaries are part of the hash
    }
}
