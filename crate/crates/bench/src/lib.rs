//! Fixtures shared by the criterion benchmarks in `benches/`.
//!
//! Run with `cargo bench -p qualgauss-bench`.

use qualgauss_core::dataio::generate_synthetic;
use qualgauss_core::{init_head, HeadConfig, HeadModel, LabeledSample, SynthSpec, Variant};

/// Synthetic samples with `feature_dim` features, fixed by `seed`.
pub fn samples(feature_dim: usize, count: usize, seed: u64) -> Vec<LabeledSample> {
    let spec = SynthSpec::random(feature_dim, count, 0.5, 0.6, 1.0, seed).expect("valid synthetic spec");
    generate_synthetic(&spec).expect("synthetic generation").samples
}

/// A freshly initialized head with the default hidden layers.
pub fn head(feature_dim: usize, variant: Variant) -> HeadModel {
    init_head(&HeadConfig::new(feature_dim, variant)).expect("valid head config")
}
