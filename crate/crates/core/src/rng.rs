//! Named random streams derived from a single root seed.
//!
//! Every stream is a ChaCha8 generator keyed by the root seed with the ChaCha
//! stream id set to a hash of the stream name, so independent consumers
//! ("pretrain", "rollout.3.1.4", "eval.17") never share or perturb state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Opens the stream `name` under `root_seed`.
pub fn stream(root_seed: u64, name: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(fnv1a(name));
    rng
}

pub fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform draw in `[0, 1)`.
pub fn uniform(rng: &mut StreamRng) -> f64 {
    rand::Rng::random(rng)
}

pub fn normals(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}
