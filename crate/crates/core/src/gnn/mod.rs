//! GIN backbone, classifier head and mask networks.

mod batch;
mod checkpoint;
mod gin;
mod layers;
mod masknet;

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::layout::Layout;
use crate::tensor::TensorError;

pub use batch::{BatchMasks, GraphBatch};
pub use checkpoint::{read_checkpoint, save_checkpoint, load_checkpoint, write_checkpoint, CheckpointError, CHECKPOINT_MAGIC};
pub use gin::{Backbone, Encoded, GinEncoder};
pub use layers::{Linear, Mlp};
pub use masknet::{MaskNet, MaskPair, MaskVars};

/// Architecture of every network in a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub classifier_layers: usize,
    pub mask_layers: usize,
    pub mask_hidden: usize,
    /// Standardize every hidden channel over the nodes of a graph inside each GIN layer MLP.
    pub graph_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 3,
            hidden: 64,
            classifier_layers: 2,
            mask_layers: 2,
            mask_hidden: 64,
            graph_norm: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("classifier_layers", self.classifier_layers),
            ("mask_layers", self.mask_layers),
            ("mask_hidden", self.mask_hidden),
        ] {
            if v == 0 {
                return Err(format!("model.{name} must be at least 1"));
            }
        }
        Ok(())
    }
}

/// A batch recorded on a tape: flat (possibly weighted) adjacency blocks and
/// stacked node features.
#[derive(Debug, Clone)]
pub struct GraphVars {
    pub adjacency: Var,
    pub features: Var,
    pub layout: Rc<Layout>,
}

impl GraphVars {
    pub fn constant(tape: &mut Tape, batch: &GraphBatch) -> Self {
        GraphVars {
            adjacency: tape.constant(batch.adjacency.clone()),
            features: tape.constant(batch.features.clone()),
            layout: Rc::clone(&batch.layout),
        }
    }

    /// `(A ⊙ edge, X ⊙ node)` with `node` of shape `[N, 1]` and `edge` flat blocks.
    pub fn masked(&self, tape: &mut Tape, node: Var, edge: Var) -> Result<Self, TensorError> {
        let (n, l) = (self.layout.total_nodes(), self.layout.total_block());
        let node_shape = tape.value(node).shape();
        let edge_shape = tape.value(edge).shape();
        if node_shape != [n, 1] || edge_shape != [l] {
            return Err(TensorError::dim(
                "mask",
                format!("masks {node_shape:?}/{edge_shape:?} for a batch of {n} nodes"),
            ));
        }
        Ok(GraphVars {
            adjacency: tape.mul(self.adjacency, edge)?,
            features: tape.mul(self.features, node)?,
            layout: Rc::clone(&self.layout),
        })
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[-1.0, -2.0, 0.5]), 2);
    }

    #[test]
    fn zero_widths_are_rejected() {
        assert!(ModelConfig::default().validate().is_ok());
        let config = ModelConfig {
            mask_hidden: 0,
            ..ModelConfig::default()
        };
        assert!(config.validate().is_err());
    }
}
