//! Seed derivation for per-sample random streams.
//!
//! Every sample owns an independent ChaCha8 stream whose 64-bit seed is
//! `splitmix64(splitmix64(master ⊕ splitmix64(stream)) ⊕ index)`. Training
//! epochs use `stream = epoch`; held-out and noise streams live in disjoint
//! high ranges so they can never collide with a training epoch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SampleRng = ChaCha8Rng;

/// First stream id of held-out evaluation sets.
pub const HELD_OUT_STREAM: u64 = 1 << 63;
/// First stream id used for evaluation-time noise draws.
pub const NOISE_STREAM: u64 = (1 << 63) | (1 << 62);
/// Stream id of the parameter initializer.
pub const INIT_STREAM: u64 = (1 << 63) | (1 << 61);
/// Stream id of single-pattern synthesis.
pub const SYNTH_STREAM: u64 = (1 << 63) | (1 << 60);

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)) ^ index)
}

pub fn rng_from_seed(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sample_rng(master: u64, stream: u64, index: u64) -> SampleRng {
    rng_from_seed(derive_seed(master, stream, index))
}
