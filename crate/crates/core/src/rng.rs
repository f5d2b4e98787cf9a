use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for `(seed, domain, index)`.
///
/// `domain` separates unrelated consumers of the same user seed (bag
/// generation, splitting, remixing, ...); `index` selects a ChaCha stream
/// so per-item generators never overlap.
pub(crate) fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

pub(crate) mod domain {
    pub const BAGS: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const MIXED: u64 = 4;
    pub const INIT: u64 = 5;
    pub const REMIX_PAIRS: u64 = 6;
    pub const REMIX_BAGS: u64 = 7;
    pub const SHUFFLE: u64 = 8;
}

/// Derives a child seed from `seed` and two indices (SplitMix64 finalizer).
pub(crate) fn derive(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(b.wrapping_mul(0xABC9_8388_FB8B_AC03))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
