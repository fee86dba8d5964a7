use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GcsConfig, GcsError};
use crate::engine::erm_step;
use crate::gnn::{Backbone, GraphBatch, ModelConfig};
use crate::graph::GraphInput;
use crate::params::{Direction, Optimizer, OptimizerKind};

/// Binary GIN trained to tell two graph sets apart; its encoder supplies the
/// features for density estimation.
#[derive(Debug, Clone)]
pub struct DomainClassifier {
    pub backbone: Backbone,
}

/// Draws indices from a shuffled pass over `0..n`, reshuffling when exhausted.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize) -> Self {
        Cycler {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn relabel(g: &GraphInput, label: usize) -> GraphInput {
    GraphInput {
        label,
        ..g.clone()
    }
}

/// Trains on `a → 0`, `b → 1`. Every batch holds equally many graphs from each
/// set, so the smaller set is revisited more often.
pub fn train_domain_classifier(
    a: &[GraphInput],
    b: &[GraphInput],
    config: &GcsConfig,
    seed: u64,
) -> Result<DomainClassifier, GcsError> {
    if a.is_empty() || b.is_empty() {
        return Err(GcsError::Argument("domain classifier needs two nonempty sets".into()));
    }
    let width = a[0].feature_dim();
    if a.iter().chain(b).any(|g| g.feature_dim() != width) {
        return Err(GcsError::Argument("graphs differ in feature width".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ModelConfig {
        layers: config.classifier_layers,
        hidden: config.classifier_hidden,
        classifier_layers: 1,
        // Per-graph channel standardization would hide constant feature offsets,
        // which are exactly the shifts this classifier has to detect.
        graph_norm: false,
        ..ModelConfig::default()
    };
    let mut backbone = Backbone::new(&model, width, 2, &mut rng);
    let mut optimizer = Optimizer::new(OptimizerKind::Adam, config.classifier_lr, Direction::Descent);
    let half = (config.classifier_batch_size / 2).max(1);
    let steps = a.len().max(b.len()).div_ceil(half) * config.classifier_epochs;
    let (mut ca, mut cb) = (Cycler::new(a.len()), Cycler::new(b.len()));
    for _ in 0..steps {
        let mut batch = Vec::with_capacity(2 * half);
        for _ in 0..half {
            batch.push(relabel(&a[ca.next(&mut rng)], 0));
            batch.push(relabel(&b[cb.next(&mut rng)], 1));
        }
        erm_step(&mut backbone, &batch, &mut optimizer, 1.0)?;
    }
    Ok(DomainClassifier { backbone })
}

impl DomainClassifier {
    /// Graph embeddings `h(g)`, one row per graph.
    pub fn features(&self, graphs: &[GraphInput]) -> Result<Vec<Vec<f64>>, GcsError> {
        let mut rows = Vec::with_capacity(graphs.len());
        for chunk in graphs.chunks(CHUNK) {
            let (_, emb) = self.backbone.encode_batch(&GraphBatch::new(chunk)?, None)?;
            let d = emb.shape()[1];
            rows.extend(emb.data().chunks(d).map(|r| r.iter().map(|&v| f64::from(v)).collect()));
        }
        Ok(rows)
    }

    /// Balanced accuracy of telling `a` (class 0) from `b` (class 1).
    pub fn accuracy(&self, a: &[GraphInput], b: &[GraphInput]) -> Result<f64, GcsError> {
        let rate = |set: &[GraphInput], want: usize| -> Result<f64, GcsError> {
            let mut hits = 0usize;
            for chunk in set.chunks(CHUNK) {
                let predicted = self.backbone.predict_batch(&GraphBatch::new(chunk)?, None)?;
                hits += predicted.iter().filter(|&&p| p == want).count();
            }
            Ok(hits as f64 / set.len().max(1) as f64)
        };
        Ok(0.5 * (rate(a, 0)? + rate(b, 1)?))
    }
}

/// Graphs per forward pass when embedding or scoring a set.
const CHUNK: usize = 256;
