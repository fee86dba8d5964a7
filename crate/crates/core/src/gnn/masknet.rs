use rand::Rng;

use super::{BatchMasks, GinEncoder, GraphBatch, GraphVars, Linear, ModelConfig};
use crate::autodiff::{Tape, Var};
use crate::graph::GraphInput;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tensor, TensorError};

/// Soft node mask (n×1) and symmetric soft edge mask (n×n, zero off the support).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub node_mask: Tensor,
    pub edge_mask: Tensor,
}

impl MaskPair {
    /// The identity mask: ones on nodes and on the edge support.
    pub fn ones_on_support(input: &GraphInput) -> Self {
        MaskPair {
            node_mask: Tensor::ones(&[input.num_nodes(), 1]),
            edge_mask: input.support(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_mask.shape()[0]
    }

    pub fn check(&self, n: usize) -> Result<(), TensorError> {
        if self.node_mask.shape() != [n, 1] || self.edge_mask.shape() != [n, n] {
            return Err(TensorError::dim(
                "mask",
                format!(
                    "masks {:?}/{:?} for a graph of {n} nodes",
                    self.node_mask.shape(),
                    self.edge_mask.shape()
                ),
            ));
        }
        Ok(())
    }

    /// The masked view `(A ⊙ M^a, X ⊙ M^x)` as a model input.
    pub fn apply(&self, input: &GraphInput) -> Result<GraphInput, TensorError> {
        let n = input.num_nodes();
        self.check(n)?;
        let mut out = input.clone();
        for (a, m) in out.adjacency.data_mut().iter_mut().zip(self.edge_mask.data()) {
            *a *= m;
        }
        let f = input.feature_dim();
        for (i, row) in out.features.data_mut().chunks_mut(f).enumerate() {
            let m = self.node_mask.data()[i];
            row.iter_mut().for_each(|v| *v *= m);
        }
        Ok(out)
    }

    /// Mean node-mask value over nodes selected by `select`, `None` if none are.
    pub fn mean_node_mask(&self, select: impl Fn(usize) -> bool) -> Option<f32> {
        let picked: Vec<f32> = self
            .node_mask
            .data()
            .iter()
            .enumerate()
            .filter(|(i, _)| select(*i))
            .map(|(_, &v)| v)
            .collect();
        (!picked.is_empty()).then(|| picked.iter().sum::<f32>() / picked.len() as f32)
    }
}

/// Mask tensors recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct MaskVars {
    pub node: Var,
    pub edge: Var,
}

/// Mask generator: its own GIN encoder, a linear node head `d → 1` and a
/// linear edge head on `[z_i, z_j]`, split as `w_src·z_i + w_dst·z_j + b`.
#[derive(Debug, Clone)]
pub struct MaskNet {
    pub store: ParamStore,
    pub encoder: GinEncoder,
    pub node_head: Linear,
    pub edge_src: ParamId,
    pub edge_dst: ParamId,
    pub edge_bias: ParamId,
}

impl MaskNet {
    pub fn new<R: Rng>(config: &ModelConfig, feature_dim: usize, rng: &mut R) -> Self {
        let d = config.mask_hidden;
        let mut store = ParamStore::new();
        let encoder = GinEncoder::new(&mut store, "encoder", feature_dim, d, config.mask_layers, rng)
            .with_norm(config.graph_norm);
        let node_head = Linear::new(&mut store, "node_head", d, 1, rng);
        let edge_src = store.insert_uniform("edge_head.src", &[d, 1], 2 * d, rng);
        let edge_dst = store.insert_uniform("edge_head.dst", &[d, 1], 2 * d, rng);
        let edge_bias = store.insert_uniform("edge_head.bias", &[1], 2 * d, rng);
        MaskNet {
            store,
            encoder,
            node_head,
            edge_src,
            edge_dst,
            edge_bias,
        }
    }

    /// Records the masks of `g`; `support` is the flat 0/1 edge indicator.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, g: &GraphVars, support: Var) -> Result<MaskVars, TensorError> {
        let z = self.encoder.encode(tape, params, g)?.nodes;
        let node_logits = self.node_head.forward(tape, params, z)?;
        let node = tape.sigmoid(node_logits);

        let src = tape.matmul(z, params.var(self.edge_src))?;
        let dst = tape.matmul(z, params.var(self.edge_dst))?;
        let pair = tape.block_outer_sum(src, dst, &g.layout)?;
        let logits = tape.add(pair, params.var(self.edge_bias))?;
        let raw = tape.sigmoid(logits);
        let raw_t = tape.block_transpose(raw, &g.layout)?;
        let both = tape.add(raw, raw_t)?;
        let sym = tape.scale(both, 0.5);
        let edge = tape.mul(sym, support)?;
        Ok(MaskVars { node, edge })
    }

    /// Masks of every graph in a batch without recording gradients.
    pub fn masks_batch(&self, batch: &GraphBatch) -> Result<BatchMasks, TensorError> {
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape, false);
        let g = GraphVars::constant(&mut tape, batch);
        let support = tape.constant(batch.support());
        let m = self.forward(&mut tape, &params, &g, support)?;
        Ok(BatchMasks {
            node: tape.value(m.node).clone(),
            edge: tape.value(m.edge).clone(),
        })
    }

    /// Masks of one graph without recording gradients.
    pub fn masks(&self, input: &GraphInput) -> Result<MaskPair, TensorError> {
        let batch = GraphBatch::new(std::slice::from_ref(input))?;
        let packed = self.masks_batch(&batch)?;
        Ok(packed.unpack(&batch.layout).remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::sigmoid;
    use crate::graph::{generate_motif_dataset, MotifConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(d: usize) -> ModelConfig {
        ModelConfig {
            layers: 1,
            hidden: d,
            classifier_layers: 1,
            mask_layers: 1,
            mask_hidden: d,
            graph_norm: false,
        }
    }

    fn path3() -> GraphInput {
        let mut adjacency = Tensor::zeros(&[3, 3]);
        for (i, j) in [(0, 1), (1, 2)] {
            adjacency.set2(i, j, 1.0);
            adjacency.set2(j, i, 1.0);
        }
        GraphInput {
            adjacency,
            features: Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap(),
            label: 0,
            num_edges: 2,
        }
    }

    #[test]
    fn generated_masks_respect_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cfg = MotifConfig::desk_base(5);
        cfg.envs.truncate(1);
        cfg.envs[0].per_class = 2;
        let net = MaskNet::new(&ModelConfig::default(), 4, &mut rng);
        for g in generate_motif_dataset(&cfg).unwrap() {
            let input = g.to_input();
            let m = net.masks(&input).unwrap();
            m.check(g.num_nodes).unwrap();
            assert!(m.node_mask.data().iter().all(|&v| v > 0.0 && v < 1.0));
            let n = g.num_nodes;
            for i in 0..n {
                for j in 0..n {
                    let v = m.edge_mask.at2(i, j);
                    assert_eq!(v.to_bits(), m.edge_mask.at2(j, i).to_bits());
                    if input.adjacency.at2(i, j) == 0.0 {
                        assert_eq!(v, 0.0);
                    } else {
                        assert!(v > 0.0 && v < 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_heads_give_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = MaskNet::new(&config(4), 1, &mut rng);
        for id in [
            net.node_head.weight,
            net.node_head.bias,
            net.edge_src,
            net.edge_dst,
            net.edge_bias,
        ] {
            net.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let input = path3();
        let m = net.masks(&input).unwrap();
        assert!(m.node_mask.data().iter().all(|&v| v == 0.5));
        assert_eq!(m.edge_mask, input.support().map(|v| v * 0.5));
    }

    #[test]
    fn path_masks_match_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = MaskNet::new(&config(1), 1, &mut rng);
        let mlp = &net.encoder.layers()[0];
        let ids = [
            mlp.layers()[0].weight,
            mlp.layers()[0].bias,
            mlp.layers()[1].weight,
            mlp.layers()[1].bias,
        ];
        for (id, v) in ids.into_iter().zip([0.1f32, 0.0, 0.2, 0.05]) {
            *net.store.get_mut(id) = Tensor::full(net.store.get(id).shape(), v);
        }
        *net.store.get_mut(net.node_head.weight) = Tensor::matrix(1, 1, vec![0.3]).unwrap();
        *net.store.get_mut(net.node_head.bias) = Tensor::vector(vec![-0.1]);
        *net.store.get_mut(net.edge_src) = Tensor::matrix(1, 1, vec![0.4]).unwrap();
        *net.store.get_mut(net.edge_dst) = Tensor::matrix(1, 1, vec![-0.2]).unwrap();
        *net.store.get_mut(net.edge_bias) = Tensor::vector(vec![0.01]);

        let x = [1.0f32, 2.0, 3.0];
        // GIN aggregate on the path, then 0.1·s -> relu -> 0.2·h + 0.05.
        let s = [x[0] + x[1], x[1] + x[0] + x[2], x[2] + x[1]];
        let z: Vec<f32> = s.iter().map(|v| 0.2 * (0.1 * v).max(0.0) + 0.05).collect();
        let m = net.masks(&path3()).unwrap();
        for i in 0..3 {
            let want = sigmoid(0.3 * z[i] - 0.1);
            assert!((m.node_mask.data()[i] - want).abs() < 1e-6);
        }
        for (i, j) in [(0, 1), (1, 2)] {
            let raw_ij = sigmoid(0.4 * z[i] - 0.2 * z[j] + 0.01);
            let raw_ji = sigmoid(0.4 * z[j] - 0.2 * z[i] + 0.01);
            let want = 0.5 * (raw_ij + raw_ji);
            assert!((m.edge_mask.at2(i, j) - want).abs() < 1e-6);
        }
        assert_eq!(m.edge_mask.at2(0, 2), 0.0);
        assert_eq!(m.edge_mask.at2(1, 1), 0.0);
    }

    #[test]
    fn mean_node_mask_selection() {
        let m = MaskPair {
            node_mask: Tensor::matrix(3, 1, vec![0.2, 0.4, 0.9]).unwrap(),
            edge_mask: Tensor::zeros(&[3, 3]),
        };
        assert!((m.mean_node_mask(|i| i < 2).unwrap() - 0.3).abs() < 1e-6);
        assert_eq!(m.mean_node_mask(|_| false), None);
    }

    #[test]
    fn applied_mask_matches_masked_encoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let graphs = generate_motif_dataset(&MotifConfig::desk_base(1)).unwrap();
        let cfg = ModelConfig {
            hidden: 8,
            mask_hidden: 8,
            ..ModelConfig::default()
        };
        let net = MaskNet::new(&cfg, 4, &mut rng);
        let backbone = crate::gnn::Backbone::new(&cfg, 4, 3, &mut rng);
        for g in graphs.iter().take(5) {
            let input = g.to_input();
            let m = net.masks(&input).unwrap();
            let viewed = m.apply(&input).unwrap();
            let a = backbone.logits(&input, Some(&m)).unwrap();
            let b = backbone.logits(&viewed, None).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-5);
            }
        }
        let wrong = MaskPair::ones_on_support(&graphs[0].to_input());
        let other = graphs.iter().find(|g| g.num_nodes != graphs[0].num_nodes).unwrap();
        assert!(wrong.apply(&other.to_input()).is_err());
    }
}
