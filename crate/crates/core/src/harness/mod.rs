//! Training loop, evaluation, dataset ingestion, configuration,
//! checkpointing: the reproduction surface for the BER/APD tables.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod report;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::TrainConfig;
pub use dataset::{load_dataset, synth_image, DatasetSource, LoadedDataset};
pub use eval::{ber, evaluate, EvalAttack, EvalReport, EvalRow};
pub use report::{emit_machine, emit_text, parse_machine};
pub use train::{train, train_with_dataset, StepLog, TrainOutcome};

/// FNV-1a 64-bit hash, used for config fingerprints and stream
/// derivation.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the seed of a named RNG stream from the master seed. Streams
/// are independent for distinct (tag, index) pairs and stable across
/// runs, which is what makes whole-pipeline determinism hold.
pub fn stream_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut bytes = Vec::with_capacity(tag.len() + 16);
    bytes.extend_from_slice(&master.to_le_bytes());
    bytes.extend_from_slice(tag.as_bytes());
    bytes.extend_from_slice(&index.to_le_bytes());
    // splitmix finalizer on top of FNV spreads low-entropy inputs.
    let mut z = fnv1a64(&bytes).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// ChaCha stream for a named purpose.
pub fn stream_rng(master: u64, tag: &str, index: u64) -> rand_chacha::ChaCha12Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha12Rng::seed_from_u64(stream_seed(master, tag, index))
}
