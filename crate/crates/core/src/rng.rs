//! Seed derivation for independent random streams.
//!
//! Every replication in a bootstrap or Monte Carlo study draws from its own
//! `ChaCha8Rng`, seeded by mixing the master seed with the replication's
//! coordinates. The mixing function is SplitMix64's finalizer folded over the
//! coordinates, so derived seeds depend only on `(master, coords)` and never on
//! thread scheduling or iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a list of coordinates.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    let mut state = splitmix_finalize(master.wrapping_add(GOLDEN));
    for (k, &c) in coords.iter().enumerate() {
        let lane = GOLDEN.wrapping_mul(k as u64 + 2);
        state = splitmix_finalize(state ^ c.wrapping_add(lane));
    }
    state
}

/// FNV-1a hash of a label, for turning identifiers into seed coordinates.
pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Convenience: a ChaCha stream for the given coordinates.
pub fn stream(master: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, coords))
}
