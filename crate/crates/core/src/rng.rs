//! Seed-stream plumbing.
//!
//! Every stochastic operation in this crate draws from a counter-based
//! ChaCha stream keyed by (seed, stream id). Record `n` of a dataset always
//! reads from stream `n` (or `(iteration, n)` during training), so results
//! do not depend on iteration order or on how work is split across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for one logical stream under a base seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for (outer iteration, record index) pairs.
///
/// Both halves must fit in 32 bits; desk-scale runs stay far below that.
pub fn iter_record_stream(iteration: u64, record: u64) -> u64 {
    debug_assert!(iteration < (1 << 32) && record < (1 << 32));
    (iteration << 32) | record
}

/// Stable 64-bit hash of a key string (FNV-1a).
///
/// Used to derive independent sub-seeds, e.g. per experiment cell or to
/// separate label corruption from feature corruption under one user seed.
pub fn stable_hash(key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Sub-seed derived from a base seed and a label.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    stable_hash(&format!("{seed}|{label}"))
}
