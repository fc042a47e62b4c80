//! Shared fixtures for the criterion benchmarks.

use bless_core::data::{Dataset, PatternCounts};
use bless_core::model::{BlessModel, GraphicalMatrix};
use bless_core::simulate::{random_model, sample_dataset, SimConfig};

/// Random model on `copies` stacked identity blocks of size `k`.
pub fn fixture_model(k: usize, copies: usize, d: usize, seed: u64) -> BlessModel {
    let g = GraphicalMatrix::stacked_identity(k, copies);
    random_model(&SimConfig::new(k * copies, k, d, seed), &g).expect("fixture parameters are feasible")
}

pub fn fixture_data(model: &BlessModel, n: usize, seed: u64) -> (Dataset, PatternCounts) {
    let data = sample_dataset(model, n, seed).expect("n > 0").data;
    let counts = PatternCounts::from_dataset(&data);
    (data, counts)
}
