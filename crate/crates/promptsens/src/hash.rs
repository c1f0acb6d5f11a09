//! Stable 64-bit hashing for seeds, cassette keys, and file fingerprints.
//!
//! Everything that must be reproducible across runs (augmentation seeds,
//! cassette lookup keys, run fingerprints) goes through FNV-1a with the
//! standard 64-bit parameters. The hash is fixed by this module and never
//! changes between releases; cassette files and recorded runs depend on it.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over raw bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hash a sequence of fields unambiguously: each field is length-prefixed
/// so that ("ab","c") and ("a","bc") hash differently.
pub fn stable_hash(fields: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for field in fields {
        for &b in (field.len() as u64).to_le_bytes().iter() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        for &b in field.iter() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Seed for one augmentation call, derived from the identity of the sample.
///
/// `rate_key` is the canonical display form of the swept rate ("0.3") or
/// bucket label ("low"); hashing the display form keeps the derivation
/// independent of float bit tricks.
pub fn augment_seed(task_id: &str, method: &str, rate_key: &str, sample_index: u32) -> u64 {
    stable_hash(&[
        b"augment",
        task_id.as_bytes(),
        method.as_bytes(),
        rate_key.as_bytes(),
        &u64::from(sample_index).to_le_bytes(),
    ])
}

/// Cassette key for one generation request. Returned as lowercase hex so it
/// can serve directly as a JSON object key.
pub fn cassette_key(model_name: &str, prompt: &str, temperature: f64, sample_index: u32) -> String {
    let h = stable_hash(&[
        b"request",
        model_name.as_bytes(),
        prompt.as_bytes(),
        &temperature.to_bits().to_le_bytes(),
        &u64::from(sample_index).to_le_bytes(),
    ]);
    format!("{h:016x}")
}

/// Fingerprint of a file's bytes, as lowercase hex.
pub fn file_fingerprint(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a(bytes))
}
