use std::rc::Rc;

use super::MaskPair;
use crate::graph::GraphInput;
use crate::layout::Layout;
use crate::tensor::{Tensor, TensorError};

/// Graphs packed into one disjoint union. Node features are stacked row-wise
/// (`[N, f]`); adjacency blocks are stored flat, one row-major `n×n` block per
/// graph.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub layout: Rc<Layout>,
    pub adjacency: Tensor,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_edges: Vec<usize>,
}

impl GraphBatch {
    pub fn new(inputs: &[GraphInput]) -> Result<Self, TensorError> {
        let Some(first) = inputs.first() else {
            return Err(TensorError::dim("batch", "no graphs"));
        };
        let f = first.feature_dim();
        if let Some(bad) = inputs.iter().find(|g| g.feature_dim() != f) {
            return Err(TensorError::dim(
                "batch",
                format!("feature width {} in a batch of width {f}", bad.feature_dim()),
            ));
        }
        let sizes: Vec<usize> = inputs.iter().map(GraphInput::num_nodes).collect();
        let layout = Layout::new(&sizes);
        let mut adjacency = Vec::with_capacity(layout.total_block());
        let mut features = Vec::with_capacity(layout.total_nodes() * f);
        for g in inputs {
            adjacency.extend_from_slice(g.adjacency.data());
            features.extend_from_slice(g.features.data());
        }
        Ok(GraphBatch {
            adjacency: Tensor::vector(adjacency),
            features: Tensor::new(vec![layout.total_nodes(), f], features)?,
            labels: inputs.iter().map(|g| g.label).collect(),
            num_edges: inputs.iter().map(|g| g.num_edges).collect(),
            layout: Rc::new(layout),
        })
    }

    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    /// Flat 0/1 edge indicator, aligned with `adjacency`.
    pub fn support(&self) -> Tensor {
        self.adjacency.map(|v| if v != 0.0 { 1.0 } else { 0.0 })
    }
}

/// Node masks `[N, 1]` and flat edge-mask blocks for a [`GraphBatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMasks {
    pub node: Tensor,
    pub edge: Tensor,
}

impl BatchMasks {
    pub fn pack(masks: &[MaskPair], layout: &Layout) -> Result<Self, TensorError> {
        if masks.len() != layout.len() {
            return Err(TensorError::dim(
                "mask",
                format!("{} masks for {} graphs", masks.len(), layout.len()),
            ));
        }
        let mut node = Vec::with_capacity(layout.total_nodes());
        let mut edge = Vec::with_capacity(layout.total_block());
        for (g, m) in masks.iter().enumerate() {
            m.check(layout.size(g))?;
            node.extend_from_slice(m.node_mask.data());
            edge.extend_from_slice(m.edge_mask.data());
        }
        Ok(BatchMasks {
            node: Tensor::new(vec![layout.total_nodes(), 1], node)?,
            edge: Tensor::vector(edge),
        })
    }

    pub fn unpack(&self, layout: &Layout) -> Vec<MaskPair> {
        (0..layout.len())
            .map(|g| {
                let n = layout.size(g);
                MaskPair {
                    node_mask: Tensor::new(vec![n, 1], self.node.data()[layout.nodes(g)].to_vec())
                        .expect("node mask slice"),
                    edge_mask: Tensor::new(vec![n, n], self.edge.data()[layout.block(g)].to_vec())
                        .expect("edge mask block"),
                }
            })
            .collect()
    }

    /// Ones on every node and on the edge support.
    pub fn ones_on_support(batch: &GraphBatch) -> Self {
        BatchMasks {
            node: Tensor::ones(&[batch.layout.total_nodes(), 1]),
            edge: batch.support(),
        }
    }

    pub fn check(&self, layout: &Layout) -> Result<(), TensorError> {
        if self.node.shape() != [layout.total_nodes(), 1] || self.edge.len() != layout.total_block() {
            return Err(TensorError::dim(
                "mask",
                format!(
                    "masks {:?}/{:?} for a batch of {} nodes",
                    self.node.shape(),
                    self.edge.shape(),
                    layout.total_nodes()
                ),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(n: usize, label: usize) -> GraphInput {
        let mut adjacency = Tensor::zeros(&[n, n]);
        for i in 1..n {
            adjacency.set2(i - 1, i, 1.0);
            adjacency.set2(i, i - 1, 1.0);
        }
        GraphInput {
            adjacency,
            features: Tensor::full(&[n, 2], label as f32),
            label,
            num_edges: n - 1,
        }
    }

    #[test]
    fn packs_in_order() {
        let b = GraphBatch::new(&[input(2, 1), input(3, 2)]).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.features.shape(), &[5, 2]);
        assert_eq!(b.adjacency.len(), 13);
        assert_eq!(b.labels, vec![1, 2]);
        assert_eq!(b.num_edges, vec![1, 2]);
        assert_eq!(&b.adjacency.data()[..4], &[0.0, 1.0, 1.0, 0.0]);
        assert!(GraphBatch::new(&[]).is_err());
    }

    #[test]
    fn masks_round_trip() {
        let inputs = [input(2, 0), input(3, 0)];
        let b = GraphBatch::new(&inputs).unwrap();
        let pairs: Vec<MaskPair> = inputs.iter().map(MaskPair::ones_on_support).collect();
        let packed = BatchMasks::pack(&pairs, &b.layout).unwrap();
        assert_eq!(packed, BatchMasks::ones_on_support(&b));
        assert_eq!(packed.unpack(&b.layout), pairs);
        assert!(BatchMasks::pack(&pairs[..1], &b.layout).is_err());
        assert!(BatchMasks::pack(&[pairs[1].clone(), pairs[0].clone()], &b.layout).is_err());
    }
}
