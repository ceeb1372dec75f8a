//! Seeded, named random streams.
//!
//! Every stochastic element of a run (measurement noise, pump disturbance,
//! initial data, test grid) draws from its own ChaCha stream keyed by the run
//! seed and a stream name, so adding draws to one stream never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Stream = ChaCha8Rng;

/// FNV-1a; stable across platforms and releases.
fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Opens the stream `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}

pub fn standard_normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}
