//! Deterministic random streams.
//!
//! Every randomized operation takes a 64-bit seed. The generator is ChaCha8
//! everywhere. Sub-components never share a stream: each draws from
//! `stream(seed, id)`, where `id` is one of the constants below, and
//! per-item seeds (per note, per track, per song) come from
//! [`derive_seed`], a SplitMix64 hash of `(seed, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_PITCH: u64 = 1;
pub const STREAM_TIMING: u64 = 2;
pub const STREAM_CHORDS: u64 = 3;
pub const STREAM_EXPRESSION: u64 = 4;
pub const STREAM_RENDER: u64 = 5;
pub const STREAM_NOISE: u64 = 6;
pub const STREAM_TIMBRE: u64 = 7;
pub const STREAM_CLUSTER: u64 = 8;
pub const STREAM_MANIFEST: u64 = 9;

/// Generator for stream `id` of `seed`.
pub fn stream(seed: u64, id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for item `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}
