//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from a stream that is keyed by
//! `(master_seed, run_tag, index)`. The derivation is:
//!
//! ```text
//! digest = SHA-256( "relscm-subseed-v1" || 0x00
//!                   || master_seed as u64 little-endian
//!                   || len(run_tag) as u64 little-endian || run_tag (UTF-8)
//!                   || index as u64 little-endian )
//! seed   = u64::from_le_bytes(digest[0..8])
//! stream = ChaCha8Rng::seed_from_u64(seed)
//! ```
//!
//! Row-level streams use the row index as `index`, which makes the output
//! independent of how rows are distributed over threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// The random stream type used throughout the generator.
pub type SeedStream = ChaCha8Rng;

const DOMAIN: &[u8] = b"relscm-subseed-v1\0";

pub fn derive_subseed(master_seed: u64, run_tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN);
    hasher.update(master_seed.to_le_bytes());
    hasher.update((run_tag.len() as u64).to_le_bytes());
    hasher.update(run_tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

pub fn stream(seed: u64) -> SeedStream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(master_seed: u64, run_tag: &str, index: u64) -> SeedStream {
    stream(derive_subseed(master_seed, run_tag, index))
}

/// Run tags used by the generation pipeline.
pub mod tags {
    pub const GRAPH_MAIN: &str = "graph-main";
    pub const GRAPH_ADD: &str = "graph-add";
    pub const CONFIGS_MAIN: &str = "configs-main";
    pub const CONFIGS_ADD: &str = "configs-add";
    pub const COMPOSE: &str = "compose";
    pub const PRERUN: &str = "prerun";
    pub const KMEANS: &str = "kmeans";
    pub const MAIN_ROWS: &str = "main";
    pub const ADD_ROWS: &str = "add";
}

/// One entry of the seed log written into the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub run_tag: String,
    /// Index range `[first, last]` covered by this tag.
    pub indices: (u64, u64),
    /// Seed of the first index, recorded as a spot check.
    pub first_seed: u64,
}

impl SeedRecord {
    pub fn new(master_seed: u64, run_tag: &str, first: u64, last: u64) -> Self {
        SeedRecord {
            run_tag: run_tag.to_string(),
            indices: (first, last),
            first_seed: derive_subseed(master_seed, run_tag, first),
        }
    }
}
