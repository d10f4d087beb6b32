//! Seeded randomness.
//!
//! Every random draw in the project comes from ChaCha8 keyed by a 64-bit seed
//! (`ChaCha8Rng::seed_from_u64`). Independent consumers use distinct ChaCha
//! stream ids, so e.g. adding a block (which draws from [`Stream::Growth`])
//! never shifts the minibatch order drawn from [`Stream::Shuffle`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Growth = 3,
    Data = 4,
    LabelNoise = 5,
    Split = 6,
    TestData = 7,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
