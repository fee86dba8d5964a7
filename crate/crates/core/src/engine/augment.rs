use rand::seq::index::sample;
use rand::Rng;

use crate::gnn::MaskPair;
use crate::graph::{Graph, GraphInput};
use crate::tensor::Tensor;

const RDCA_RATE: f64 = 0.2;

/// Removes each undirected edge independently with probability `p`.
pub fn dropedge_augment<R: Rng>(graph: &Graph, p: f32, rng: &mut R) -> Graph {
    let mut out = graph.clone();
    out.edges.retain(|_| !rng.gen_bool(p as f64));
    out
}

/// [`dropedge_augment`] on a model input; weighted entries are dropped pairwise.
pub fn dropedge_input<R: Rng>(input: &GraphInput, p: f32, rng: &mut R) -> GraphInput {
    let mut out = input.clone();
    let n = input.num_nodes();
    let mut kept = 0;
    for i in 0..n {
        for j in i + 1..n {
            if input.adjacency.at2(i, j) == 0.0 {
                continue;
            }
            if rng.gen_bool(p as f64) {
                out.adjacency.set2(i, j, 0.0);
                out.adjacency.set2(j, i, 0.0);
            } else {
                kept += 1;
            }
        }
    }
    out.num_edges = kept;
    out
}

/// Masks that are 1 on the support except for a uniformly chosen ⌊0.2·count⌋ nodes
/// and ⌊0.2·count⌋ undirected edges, which are 0.
pub fn rdca_random_masks<R: Rng>(input: &GraphInput, rng: &mut R) -> MaskPair {
    let n = input.num_nodes();
    let mut node_mask = Tensor::ones(&[n, 1]);
    let drop = (RDCA_RATE * n as f64).floor() as usize;
    for i in sample(rng, n, drop) {
        node_mask.data_mut()[i] = 0.0;
    }

    let mut edge_mask = input.support();
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| input.adjacency.at2(i, j) != 0.0)
        .collect();
    let drop = (RDCA_RATE * edges.len() as f64).floor() as usize;
    for e in sample(rng, edges.len(), drop) {
        let (i, j) = edges[e];
        edge_mask.set2(i, j, 0.0);
        edge_mask.set2(j, i, 0.0);
    }
    MaskPair {
        node_mask,
        edge_mask,
    }
}
