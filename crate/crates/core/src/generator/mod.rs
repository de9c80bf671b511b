//! Problem generation, filtering, audits and variant derivation.

pub mod audit;
pub mod build;
pub mod config;
pub mod local;
pub mod meta;
pub mod sample;
pub mod variants;
pub mod worldgen;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use build::{build_problem, generate_pool, try_build};
pub use config::GeneratorConfig;
pub use variants::{
    build_alt_task, build_cex, derive_variants, find_single_separator, run_witness, select_extra_worlds, surviving, AltTask,
    CexStats, Separator,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error("rejected at {stage}: {reason}")]
    Rejected { stage: &'static str, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl GenError {
    pub fn rejected(stage: &'static str, reason: impl Into<String>) -> GenError {
        GenError::Rejected {
            stage,
            reason: reason.into(),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for one (problem, attempt, purpose) triple.
pub fn stream(master: u64, index: u64, attempt: u32, purpose: u64) -> ChaCha8Rng {
    let seed = splitmix(splitmix(splitmix(master) ^ index) ^ (attempt as u64) << 8 ^ purpose);
    ChaCha8Rng::seed_from_u64(seed)
}
