//! Shared fixtures for the benchmarks.

use advca_core::engine::{Method, ModelBundle, TrainConfig, Trainer};
use advca_core::graph::{generate_motif_dataset, MotifConfig, NUM_CLASSES};
use advca_core::{GraphInput, ModelConfig, OptimizerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The first `n` training graphs of the desk-scale base-shift dataset.
pub fn desk_inputs(n: usize) -> Vec<GraphInput> {
    let graphs = generate_motif_dataset(&MotifConfig::desk_base(0)).expect("valid desk config");
    graphs.iter().take(n).map(|g| g.to_input()).collect()
}

pub fn bench_model() -> ModelConfig {
    ModelConfig {
        layers: 2,
        hidden: 32,
        classifier_layers: 2,
        mask_layers: 2,
        mask_hidden: 32,
        graph_norm: true,
    }
}

pub fn trainer(method: Method) -> Trainer {
    let bundle = ModelBundle::new(&bench_model(), method, 4, NUM_CLASSES, 0);
    let config = TrainConfig {
        optimizer: OptimizerKind::Adam,
        beta: 1e-3,
        ..TrainConfig::default()
    };
    Trainer::new(bundle, method, config).expect("valid trainer")
}

/// `n` points in `dim` dimensions, uniform on the unit cube shifted by `offset`.
pub fn cloud(n: usize, dim: usize, offset: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| offset + rng.gen::<f64>()).collect()).collect()
}
