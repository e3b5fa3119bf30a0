//! Stable configuration fingerprints embedded in every output artifact.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("fingerprinted values serialize to JSON");
    let digest = Sha256::digest(&json);
    hex::encode(&digest[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_sensitive() {
        let a = fingerprint(&(1u32, "x"));
        assert_eq!(a, fingerprint(&(1u32, "x")));
        assert_ne!(a, fingerprint(&(2u32, "x")));
        assert_eq!(a.len(), 16);
    }
}
