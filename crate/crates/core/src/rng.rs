//! Seed stream splitting.
//!
//! Every consumer of randomness derives its own ChaCha8 generator from the
//! master seed plus a `(purpose, subject, index)` triple. Streams never depend
//! on the order in which other consumers ran, so serial and parallel
//! executions draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    StudentInit = 1,
    TeacherInit = 2,
    Shuffle = 3,
    FineTuneShuffle = 4,
    TeacherShuffle = 5,
    DpNoise = 6,
    ClientSelect = 7,
    Smote = 8,
    ScenarioGen = 9,
    Split = 10,
}

/// Subject index used for streams that are not tied to one device.
pub const GLOBAL: u64 = u64::MAX;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Master seed wrapper that hands out independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn key(&self, purpose: Purpose, subject: u64, index: u64) -> [u8; 32] {
        let mut h = splitmix64(self.seed);
        h = splitmix64(h ^ purpose as u64);
        h = splitmix64(h ^ subject);
        h = splitmix64(h ^ index);
        let mut out = [0u8; 32];
        for (i, chunk) in out.chunks_exact_mut(8).enumerate() {
            h = splitmix64(h ^ i as u64);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        out
    }

    pub fn stream(&self, purpose: Purpose, subject: u64, index: u64) -> StreamRng {
        ChaCha8Rng::from_seed(self.key(purpose, subject, index))
    }
}
