//! Deterministic random substreams.
//!
//! Every parallel unit of work (a sweep cell, a candidate score, a repeat)
//! derives its own generator from the run seed plus a key path, so results
//! do not depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the substream identified by `seed` and `keys`.
pub fn substream(seed: u64, keys: &[u64]) -> Rng {
    let mut h = splitmix(seed);
    for &k in keys {
        h = splitmix(h ^ splitmix(k.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    Rng::seed_from_u64(h)
}

/// Fresh seed drawn from an existing generator.
pub fn child(rng: &mut impl rand::Rng) -> Rng {
    Rng::seed_from_u64(rng.random())
}
