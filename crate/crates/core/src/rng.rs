//! Deterministic random-number streams.
//!
//! Every consumer of randomness derives its own labelled stream from the
//! experiment seed, so adding or removing one consumer never shifts the draws
//! seen by another. A stream is identified by the seed plus a list of tag
//! words (purpose, epoch, batch, example index, ...); the tags are folded
//! through SplitMix64 into a 256-bit ChaCha key.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream purposes. Fixed words, never reused across call sites.
pub const STREAM_INIT: u64 = 0x494e_4954; // parameter initialization
pub const STREAM_SPLIT: u64 = 0x5350_4c54; // train/validation split
pub const STREAM_SHUFFLE: u64 = 0x5348_4646; // per-epoch batch shuffle
pub const STREAM_AUG: u64 = 0x4155_474e; // augmentation noise, training
pub const STREAM_VAL: u64 = 0x5641_4c4e; // augmentation noise, validation
pub const STREAM_ROBUST: u64 = 0x524f_4253; // robustness evaluation noise
pub const STREAM_SYNTH: u64 = 0x5359_4e54; // synthetic dataset generation

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent ChaCha12 stream from `seed` and `tags`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha12Rng {
    let mut state = seed;
    let mut acc = splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0x2545_f491_4f6c_dd1d);
        acc = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    let mut s = acc;
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// One standard normal draw. Single source of Gaussian variates so every
/// module consumes streams identically.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// Fills `out` with standard normal draws in order.
pub fn fill_standard_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = standard_normal(rng);
    }
}

/// Fisher-Yates shuffle of `0..n` driven by the given stream.
pub fn permutation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
