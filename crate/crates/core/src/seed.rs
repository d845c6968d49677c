//! Deterministic seed fan-out.
//!
//! A single base seed is expanded into per-stage, per-fold seeds so any stage
//! of a run can be re-executed in isolation with identical randomness. The
//! derivation is a plain FNV-1a hash over (base seed, stage name, index) and
//! is stable across platforms and releases.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Derive the seed for a named stochastic stage.
///
/// `index` distinguishes repeated instances of the same stage (fold number,
/// autoencoder layer, grid cell, ...).
pub fn derive_seed(base: u64, stage: &str, index: u64) -> u64 {
    let mut h = FNV_OFFSET;
    for b in base.to_le_bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    for b in stage.as_bytes() {
        h = (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME);
    }
    for b in index.to_le_bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    h
}
