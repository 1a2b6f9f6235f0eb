//! Seed handling. Every source of randomness draws from its own ChaCha
//! stream derived from the root seed, so changing e.g. the masking pattern
//! never perturbs frame sampling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    FrameSampling,
    Masking,
    Negatives,
    Shuffle,
    CaptionPick,
    Augment,
    Generator,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::FrameSampling => 2,
            Stream::Masking => 3,
            Stream::Negatives => 4,
            Stream::Shuffle => 5,
            Stream::CaptionPick => 6,
            Stream::Augment => 7,
            Stream::Generator => 8,
        }
    }
}

/// ChaCha stream for one concern, fully determined by `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Per-item derivation (per video, per example) inside one concern.
pub fn item_rng(seed: u64, stream: Stream, item: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ item.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream.id());
    rng
}
