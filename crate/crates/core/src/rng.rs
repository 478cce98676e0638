//! Counter-based random streams.
//!
//! Every replicate draws from its own ChaCha8 stream addressed by
//! `(seed, replicate index)`, so results never depend on how replicates are
//! scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type SimRng = ChaCha8Rng;

/// Independent stream number `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a seed for a named sub-experiment so that two consumers of the
/// same master seed never share streams.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

/// Runs `f` once per replicate on the rayon pool, each with its own stream.
/// Output order is replicate order.
pub fn replicates<T, F>(seed: u64, reps: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut SimRng) -> T + Sync + Send,
{
    (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            f(i, &mut rng)
        })
        .collect()
}
