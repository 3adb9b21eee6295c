//! Seeded random streams.
//!
//! A single master seed fans out into independent ChaCha streams, one per
//! consumer. Each consumer draws only from its own stream, so enabling or
//! disabling one source of randomness (say, augmentation) leaves the draws of
//! every other consumer unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Crop,
    Augment,
    Init,
    Data,
    Eval,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Crop => 1,
            Stream::Augment => 2,
            Stream::Init => 3,
            Stream::Data => 4,
            Stream::Eval => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, stream: Stream) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.id());
        rng
    }
}
