//! Content digests: request hashes for teacher-call caching and derived RNG
//! seeds for the deterministic simulator and trainer.
//!
//! All hashing is SHA-256 over length-prefixed parts, so no combination of
//! part contents can collide by concatenation tricks.

use alloc::string::String;
use alloc::vec::Vec;
use sha2::{Digest, Sha256};

fn feed_parts(hasher: &mut Sha256, parts: &[&str]) {
    for part in parts {
        let bytes = part.as_bytes();
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
}

/// Hex-encoded SHA-256 over length-prefixed parts.
#[must_use]
pub fn sha256_hex(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    feed_parts(&mut hasher, parts);
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    const TABLE: &[u8; 16] = b"0123456789abcdef";
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push(TABLE[(b >> 4) as usize] as char);
        out.push(TABLE[(b & 0x0f) as usize] as char);
    }
    out
}

/// Identity of one teacher sample request. `sample_index` is part of the key
/// so each draw of a multi-sample request has its own cache row; the number of
/// samples requested alongside it deliberately is not, so re-harvesting with a
/// smaller `n` still hits the cache.
#[must_use]
pub fn request_hash(
    prompt: &str,
    model_id: &str,
    temperature: f64,
    max_tokens: u32,
    sample_index: u32,
) -> String {
    let temp = alloc::format!("{temperature}");
    let max = alloc::format!("{max_tokens}");
    let idx = alloc::format!("{sample_index}");
    sha256_hex(&["teacher-request", prompt, model_id, &temp, &max, &idx])
}

/// Derive a 32-byte RNG seed from a domain tag, string parts, and a base seed.
/// Equal inputs give equal seeds on every platform.
#[must_use]
pub fn derive_seed(domain: &str, parts: &[&str], base_seed: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    let seed_str = alloc::format!("{base_seed}");
    let mut all: Vec<&str> = Vec::with_capacity(parts.len() + 2);
    all.push(domain);
    all.push(&seed_str);
    all.extend_from_slice(parts);
    feed_parts(&mut hasher, &all);
    hasher.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parts_are_length_prefixed() {
        // Without length prefixes these two would collide.
        assert_ne!(sha256_hex(&["ab", "c"]), sha256_hex(&["a", "bc"]));
        assert_ne!(sha256_hex(&["abc"]), sha256_hex(&["abc", ""]));
    }

    #[test]
    fn request_hash_keys_on_every_field() {
        let base = request_hash("p", "m", 0.7, 256, 0);
        assert_eq!(base, request_hash("p", "m", 0.7, 256, 0));
        assert_ne!(base, request_hash("q", "m", 0.7, 256, 0));
        assert_ne!(base, request_hash("p", "n", 0.7, 256, 0));
        assert_ne!(base, request_hash("p", "m", 0.8, 256, 0));
        assert_ne!(base, request_hash("p", "m", 0.7, 257, 0));
        assert_ne!(base, request_hash("p", "m", 0.7, 256, 1));
    }

    #[test]
    fn derived_seeds_depend_on_domain_and_base() {
        let a = derive_seed("sim-cot", &["inst-1", "0"], 42);
        assert_eq!(a, derive_seed("sim-cot", &["inst-1", "0"], 42));
        assert_ne!(a, derive_seed("sim-eval", &["inst-1", "0"], 42));
        assert_ne!(a, derive_seed("sim-cot", &["inst-1", "1"], 42));
        assert_ne!(a, derive_seed("sim-cot", &["inst-1", "0"], 43));
    }
}
