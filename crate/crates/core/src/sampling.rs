//! Deterministic Gaussian sample blocks keyed by `(seed, stream, block)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Mat;

/// Columns per sample block.
pub const BLOCK: usize = 256;

fn mix(seed: u64, stream: u64, block: u64) -> u64 {
    // SplitMix64 finaliser over the combined key.
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ block.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64, stream: u64, block: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, stream, block))
}

/// `rows x cols` standard-normal block.
pub fn gaussian_block(rows: usize, cols: usize, seed: u64, stream: u64, block: u64) -> Mat {
    let mut r = rng(seed, stream, block);
    // Column-major fill keeps each column's entries contiguous in the stream.
    Mat::from_iterator(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(&mut r)))
}

/// Splits `total` samples into block sizes.
pub fn blocks(total: usize) -> Vec<usize> {
    let mut out = vec![BLOCK; total / BLOCK];
    if total % BLOCK != 0 {
        out.push(total % BLOCK);
    }
    out
}

/// Stable stream identifier for a named check at a level.
pub fn stream_id(name: &str, level: i32) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ (level as i64 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
