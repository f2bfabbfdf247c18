//! Seed derivation and seeded sampling helpers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from a master seed and a path of tags.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(master), |acc, &t| mix(acc ^ mix(t)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix of i.i.d. `N(0, scale^2)` entries.
pub fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

// Stream tags. Kept distinct so unrelated draws never share a sub-seed.
pub(crate) const TAG_EMBEDDING: u64 = 1;
pub(crate) const TAG_INTERACTION: u64 = 2;
pub(crate) const TAG_MLP: u64 = 3;
pub(crate) const TAG_PROJECTION: u64 = 4;
pub(crate) const TAG_TOY_X3: u64 = 10;
pub(crate) const TAG_TOY_Y: u64 = 11;
pub(crate) const TAG_PATTERN_BANK: u64 = 20;
pub(crate) const TAG_PATTERN_PAIRS: u64 = 21;
pub(crate) const TAG_PATTERN_ROWS: u64 = 22;
pub(crate) const TAG_PATTERN_NOISE: u64 = 23;
pub(crate) const TAG_PATTERN_LABEL: u64 = 24;
pub(crate) const TAG_RANDOM_IA: u64 = 30;
