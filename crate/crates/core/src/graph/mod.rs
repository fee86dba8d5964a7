//! Attributed graphs, the Motif generator, covariate splits, and JSONL storage.

mod generate;
mod jsonl;
mod split;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub use generate::{
    generate_motif_dataset, make_base_graph, make_motif, BaseKind, EnvSpec, MotifConfig,
    MotifKind, Topology, NUM_CLASSES, SIZE_BUCKETS,
};
pub use jsonl::{load_jsonl, read_jsonl, save_jsonl, write_jsonl};
pub use split::{split_covariate, DatasetSplit, ShiftKind};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Undirected attributed graph with its class label and environment tag.
///
/// `causal_nodes` is ground truth for evaluation only; models consume a
/// [`GraphInput`], which does not carry it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub id: usize,
    pub num_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub features: Vec<Vec<f32>>,
    pub label: usize,
    pub env: String,
    pub causal_nodes: Vec<bool>,
}

impl Graph {
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Checks the structural invariants: ordered in-range edges without
    /// duplicates or self-loops and per-node feature/flag rows.
    pub fn validate(&self) -> Result<(), String> {
        if self.num_nodes == 0 {
            return Err("graph has no nodes".into());
        }
        let mut seen = HashSet::with_capacity(self.edges.len());
        for &[i, j] in &self.edges {
            if i >= j {
                return Err(format!("edge ({i},{j}) must satisfy i < j"));
            }
            if j >= self.num_nodes {
                return Err(format!("edge ({i},{j}) out of range for {} nodes", self.num_nodes));
            }
            if !seen.insert((i, j)) {
                return Err(format!("duplicate edge ({i},{j})"));
            }
        }
        if self.features.len() != self.num_nodes {
            return Err(format!(
                "{} feature rows for {} nodes",
                self.features.len(),
                self.num_nodes
            ));
        }
        let width = self.feature_dim();
        if width == 0 || self.features.iter().any(|r| r.len() != width) {
            return Err("feature rows must be nonempty and equally wide".into());
        }
        if self.causal_nodes.len() != self.num_nodes {
            return Err(format!(
                "{} causal flags for {} nodes",
                self.causal_nodes.len(),
                self.num_nodes
            ));
        }
        if self.label >= NUM_CLASSES {
            return Err(format!("label {} out of range", self.label));
        }
        Ok(())
    }

    pub fn is_connected(&self) -> bool {
        is_connected(self.num_nodes, &self.edges)
    }

    /// Whether the nodes flagged causal induce a connected subgraph.
    pub fn causal_subgraph_connected(&self) -> bool {
        let index: Vec<Option<usize>> = {
            let mut next = 0;
            self.causal_nodes
                .iter()
                .map(|&c| {
                    c.then(|| {
                        next += 1;
                        next - 1
                    })
                })
                .collect()
        };
        let count = index.iter().flatten().count();
        let edges: Vec<[usize; 2]> = self
            .edges
            .iter()
            .filter_map(|&[i, j]| Some([index[i]?, index[j]?]))
            .collect();
        count > 0 && is_connected(count, &edges)
    }

    /// Model-facing view: dense 0/1 adjacency, feature matrix and label.
    pub fn to_input(&self) -> GraphInput {
        let n = self.num_nodes;
        let mut adjacency = Tensor::zeros(&[n, n]);
        for &[i, j] in &self.edges {
            adjacency.set2(i, j, 1.0);
            adjacency.set2(j, i, 1.0);
        }
        let features = Tensor::from_rows(&self.features).expect("validated feature rows");
        GraphInput {
            adjacency,
            features,
            label: self.label,
            num_edges: self.edges.len(),
        }
    }
}

/// What a model sees of a graph. Adjacency may be weighted (soft-masked views).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub adjacency: Tensor,
    pub features: Tensor,
    pub label: usize,
    /// Undirected edges of the underlying topology.
    pub num_edges: usize,
}

impl GraphInput {
    pub fn num_nodes(&self) -> usize {
        self.adjacency.shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// 0/1 indicator of the edge support, `1^a` with non-edges zeroed.
    pub fn support(&self) -> Tensor {
        self.adjacency.map(|v| if v != 0.0 { 1.0 } else { 0.0 })
    }
}

pub(crate) fn is_connected(n: usize, edges: &[[usize; 2]]) -> bool {
    if n == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for &[i, j] in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Graph {
        Graph {
            id: 0,
            num_nodes: 3,
            edges: vec![[0, 1], [1, 2]],
            features: vec![vec![1.0]; 3],
            label: 1,
            env: "path".into(),
            causal_nodes: vec![false, true, true],
        }
    }

    #[test]
    fn validate_catches_bad_edges() {
        assert!(tiny().validate().is_ok());
        let mut g = tiny();
        g.edges.push([1, 0]);
        assert!(g.validate().is_err());
        let mut g = tiny();
        g.edges.push([0, 1]);
        assert!(g.validate().is_err());
        let mut g = tiny();
        g.edges.push([2, 3]);
        assert!(g.validate().is_err());
        let mut g = tiny();
        g.causal_nodes.pop();
        assert!(g.validate().is_err());
    }

    #[test]
    fn input_adjacency_is_symmetric() {
        let input = tiny().to_input();
        assert_eq!(
            input.adjacency.data(),
            &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(input.support(), input.adjacency);
        assert_eq!(input.num_edges, 2);
    }

    #[test]
    fn connectivity() {
        assert!(tiny().is_connected());
        assert!(tiny().causal_subgraph_connected());
        let mut g = tiny();
        g.edges = vec![[0, 1]];
        assert!(!g.is_connected());
        g.causal_nodes = vec![true, false, true];
        assert!(!g.causal_subgraph_connected());
    }
}
