//! Counter-based seeding: every (master seed, cell, replicate, purpose) tuple
//! maps to its own ChaCha stream, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one seed.
pub fn mix(words: &[u64]) -> u64 {
    words.iter().fold(0x6a09_e667_f3bc_c908, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Purpose tags for sub-streams of one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Bootstrap = 2,
    Mixture = 3,
    Folds = 4,
}

pub fn stream(master: u64, cell: u64, replicate: u64, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[master, cell, replicate, purpose as u64]))
}

/// Seed (not generator) for components that derive further sub-streams themselves.
pub fn sub_seed(master: u64, cell: u64, replicate: u64, purpose: Purpose) -> u64 {
    mix(&[master, cell, replicate, purpose as u64, 0xfeed])
}
