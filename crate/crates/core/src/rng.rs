//! Deterministic random-stream splitting.
//!
//! Every random draw in a run is taken from a ChaCha8 stream keyed by
//! `(master seed, rollout, purpose)`. The key is folded through SplitMix64 so
//! neighbouring keys give unrelated streams. Because contexts, loss noise and
//! actions come from separate streams, two methods run with the same master
//! seed see identical context and loss-noise sequences for each rollout
//! (common random numbers), and any batch can be regenerated in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Purpose {
    Context = 1,
    Action = 2,
    LossNoise = 3,
    Evaluation = 4,
    Restarts = 5,
    CrossValidation = 6,
    Replication = 7,
    Skyline = 8,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one 64-bit key.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x5C4D_2A1B_0F3E_6C71, |acc, w| splitmix64(acc ^ splitmix64(*w)))
}

/// Seed tree for one run.
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

    pub fn stream(&self, rollout: u64, purpose: Purpose) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(&[self.seed, rollout, purpose as u64]))
    }

    /// Child seed tree, e.g. for replication `index` of an experiment.
    pub fn child(&self, index: u64) -> Streams {
        Streams::new(mix(&[self.seed, index, Purpose::Replication as u64]))
    }
}
