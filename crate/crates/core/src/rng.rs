//! Deterministic stream splitting.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by
//! `(master seed, domain)` and positioned on a stream chosen by an index
//! (usually the global game number). Two runs with the same seed therefore
//! see the same dice and the same sampled actions no matter how work is
//! chunked across threads or resumed from a checkpoint.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag mixed into the key so unrelated consumers never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Dice = 1,
    Policy = 2,
    Dropout = 3,
    Init = 4,
    Probe = 5,
    Context = 6,
    Shuffle = 7,
    RolloutDropout = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for `index` within `domain` under `seed`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(domain as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
