//! Named random streams derived from a single run seed.
//!
//! Each consumer of randomness gets its own ChaCha stream so that adding or
//! removing one consumer (for example the dynamics model) never shifts the
//! draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Env = 1,
    Explore = 2,
    QBatch = 3,
    ModelBatch = 4,
    ModelNoise = 5,
    ActNoise = 6,
    Eval = 7,
    InitQ = 8,
    InitModel = 9,
    TargetNoise = 10,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
