//! Seeded random streams.
//!
//! All randomness goes through ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64` and split into independent streams with `set_stream`. The
//! algorithm is fixed and platform-independent, so a given `(seed, stream)`
//! pair yields the same sequence everywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream tags for the separate stages of an experiment, so toggling one stage
/// never shifts another's random sequence.
pub mod tags {
    pub const WORLD: u64 = 1;
    pub const TRAIN_SCENES: u64 = 2;
    pub const TEST_SCENES: u64 = 3;
    pub const REPG_INIT: u64 = 10;
    pub const CONG_INIT: u64 = 11;
    pub const FREE_INIT: u64 = 12;
    pub const PRETRAIN: u64 = 20;
    pub const EM: u64 = 21;
    pub const FREE_TRAIN: u64 = 22;
    pub const LABEL_NOISE: u64 = 30;
    pub const APPEARANCE: u64 = 31;
}
