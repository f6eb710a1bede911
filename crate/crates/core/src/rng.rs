//! Deterministic random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by
//! `(seed, stream, index)`. Streams separate purposes (secret sampling,
//! per-stage batches, oracle noise, ...) and the index separates samples, so
//! results never depend on iteration order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stream identifiers. Stage-dependent streams add the stage number.
pub mod streams {
    pub const SECRET: u64 = 1;
    pub const TRAIN_BATCH: u64 = 0x100;
    pub const ORACLE_NOISE: u64 = 0x200;
    pub const VALIDATION: u64 = 0x300;
    pub const TEST: u64 = 0x400;
    pub const EXPERIMENT_STEP: u64 = 1 << 32;
    pub const LEMMA: u64 = 1 << 48;
}

/// A seed together with the stream it selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub seed: u64,
    pub stream: u64,
}

impl SeedSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Generator for substream `index` of this stream.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        stream_rng(self.seed, self.stream, index)
    }

    pub fn with_stream(&self, stream: u64) -> Self {
        Self {
            seed: self.seed,
            stream,
        }
    }
}

pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(b"loglab\x00\x01");
    ChaCha8Rng::from_seed(key)
}
