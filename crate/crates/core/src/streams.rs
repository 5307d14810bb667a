//! Deterministic random streams.
//!
//! Every site owns a ChaCha8 stream keyed by the run seed and selected by a
//! hash of the site coordinates. ChaCha is a counter-mode cipher, so the
//! numbers a site sees depend only on `(seed, coords)` and on how many
//! numbers that site has consumed, never on the global event order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::lattice::Site;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a tag into a seed; distinct tags give unrelated seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(tag.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Seed of the `i`-th replica of an experiment.
pub fn replica_seed(seed: u64, i: u64) -> u64 {
    derive_seed(seed, i)
}

fn key_from_seed(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut z = seed;
    for chunk in key.chunks_mut(8) {
        z = splitmix64(z);
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    key
}

/// Stream selector for a site. Salted selectors let tests swap out the
/// randomness of chosen sites.
pub fn site_stream_id(site: &Site, salt: u64) -> u64 {
    let mut h = 0x51_7cc1_b727_220a_u64 ^ (site.dim() as u64);
    for &c in site.coords() {
        h = splitmix64(h ^ c as u64);
    }
    if salt != 0 {
        h ^= splitmix64(salt);
    }
    h
}

/// The clock-and-bit stream of `site` in a run with `seed`.
pub fn site_rng(seed: u64, site: &Site, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key_from_seed(seed));
    rng.set_stream(site_stream_id(site, salt));
    rng
}

/// Auxiliary stream (initial-configuration draws, bootstrap resampling),
/// kept disjoint from the site streams by its key.
pub fn aux_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(key_from_seed(derive_seed(seed ^ 0xa5a5_a5a5_a5a5_a5a5, tag)))
}
