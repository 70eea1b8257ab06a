//! Shared fixtures for the micro-benchmarks.

use varkit_core::{build_model, Model, ModelConfig};

/// Small desk-schedule model used across benchmarks.
pub fn bench_model(seed: u64) -> Model {
    let mut config = ModelConfig::desk(seed);
    config.dim = 64;
    config.depth = 2;
    config.heads = 2;
    build_model(&config).expect("bench model builds")
}
