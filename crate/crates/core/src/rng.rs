//! Seeded random streams.
//!
//! Every consumer of randomness (data order, augmentation, initialization,
//! batch planning, masks) owns its own ChaCha stream, so adding or removing
//! draws in one never shifts another. Per-sample work derives one stream per
//! sample index from a single parent draw, which keeps results independent
//! of evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream ids used with [`stream`].
pub mod ids {
    pub const DATA_ORDER: u64 = 0;
    pub const AUGMENT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const BATCH_PLAN: u64 = 3;
    pub const REGULARIZER: u64 = 4;
    pub const SYNTHETIC_TRAIN: u64 = 5;
    pub const SYNTHETIC_TEST: u64 = 6;
}

pub fn stream(seed: u64, id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One key drawn from a parent generator; sample `i` gets stream `i` under it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleStreams {
    key: [u8; 32],
}

impl SampleStreams {
    pub fn draw<R: Rng + ?Sized>(parent: &mut R) -> Self {
        let mut key = [0u8; 32];
        parent.fill(&mut key);
        Self { key }
    }

    pub fn sample(&self, index: usize) -> StreamRng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index as u64);
        rng
    }
}
