//! Deterministic per-purpose random streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// A ChaCha stream keyed by `(seed, purpose)`.
pub fn stream(seed: u64, purpose: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

/// Independent streams used by one training run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStreams {
    pub batch: StreamRng,
    pub step: StreamRng,
    pub dp_noise: StreamRng,
    pub forward: StreamRng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { batch: stream(seed, 1), step: stream(seed, 2), dp_noise: stream(seed, 3), forward: stream(seed, 4) }
    }
}

/// Serializable position of a stream, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl StreamState {
    pub fn capture(rng: &StreamRng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
