//! Named random streams derived from a single experiment seed.
//!
//! Every consumer of randomness draws from its own ChaCha stream, so adding a
//! new consumer never shifts the numbers seen by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Dropout,
    Data,
    Shuffle,
    Uncertainty,
    Test,
    Centers,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Dropout => 2,
            Stream::Data => 3,
            Stream::Shuffle => 4,
            Stream::Uncertainty => 5,
            Stream::Test => 6,
            Stream::Centers => 7,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
