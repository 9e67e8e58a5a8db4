//! Shared fixtures for the criterion benches.

use relscm_core::config::{GenerationConfig, GraphParams};
use relscm_core::eval::features::FeatureMatrix;
use relscm_core::seed::stream;
use rand::Rng;

/// Main graph of 8 nodes, additional graph of 5.
pub fn small_schema_config(seed: u64, rows_main: usize) -> GenerationConfig {
    GenerationConfig {
        master_seed: seed,
        main_graph: GraphParams::fixed(8, 2),
        add_graph: GraphParams::fixed(5, 2),
        rows_main,
        rows_add: 500,
        ..Default::default()
    }
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> FeatureMatrix {
    let mut rng = stream(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureMatrix::unlabeled(rows, cols, data)
}
