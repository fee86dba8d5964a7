use rand::Rng;

use super::{argmax, BatchMasks, GraphBatch, GraphVars, MaskPair, Mlp, ModelConfig};
use crate::autodiff::{Tape, Var};
use crate::graph::GraphInput;
use crate::params::{Bound, ParamStore};
use crate::tensor::{Tensor, TensorError};

/// Node states `Z` (`[N, d]`) and the mean-pooled graph embeddings (`[B, d]`).
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub nodes: Var,
    pub graph: Var,
}

/// GIN with ε = 0: `H ← MLP(H + Â·H)`, ReLU between layers, mean readout.
///
/// With `norm` set, the hidden layer of each MLP is standardized per channel over
/// the graph's nodes before its ReLU, a per-graph stand-in for batch norm.
#[derive(Debug, Clone)]
pub struct GinEncoder {
    layers: Vec<Mlp>,
    norm: bool,
}

impl GinEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let width_in = if l == 0 { input } else { hidden };
                Mlp::new(store, &format!("{name}.{l}"), &[width_in, hidden, hidden], rng)
            })
            .collect();
        GinEncoder { layers, norm: false }
    }

    pub fn with_norm(mut self, norm: bool) -> Self {
        self.norm = norm;
        self
    }

    pub fn normalized(&self) -> bool {
        self.norm
    }

    pub fn layers(&self) -> &[Mlp] {
        &self.layers
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn encode(&self, tape: &mut Tape, params: &Bound, g: &GraphVars) -> Result<Encoded, TensorError> {
        let width = tape.value(g.features).shape()[1];
        if width != self.input_dim() {
            return Err(TensorError::dim(
                "encode",
                format!("feature width {width}, encoder expects {}", self.input_dim()),
            ));
        }
        let last = self.layers.len() - 1;
        let mut h = g.features;
        for (l, mlp) in self.layers.iter().enumerate() {
            let agg = tape.block_matmul(g.adjacency, h, &g.layout)?;
            let pre = tape.add(h, agg)?;
            h = if self.norm {
                self.normed_mlp(tape, params, mlp, pre, g)?
            } else {
                mlp.forward(tape, params, pre)?
            };
            if l < last {
                h = tape.relu(h);
            }
        }
        let graph = tape.segment_mean(h, &g.layout)?;
        Ok(Encoded { nodes: h, graph })
    }

    fn normed_mlp(&self, tape: &mut Tape, params: &Bound, mlp: &Mlp, x: Var, g: &GraphVars) -> Result<Var, TensorError> {
        let mut h = x;
        for (i, layer) in mlp.layers().iter().enumerate() {
            if i > 0 {
                h = tape.segment_normalize(h, &g.layout, NORM_EPS)?;
                h = tape.relu(h);
            }
            h = layer.forward(tape, params, h)?;
        }
        Ok(h)
    }
}

const NORM_EPS: f32 = 1e-5;

/// `f = Φ ∘ h`: encoder plus classifier, with its own parameter store.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub store: ParamStore,
    pub encoder: GinEncoder,
    pub classifier: Mlp,
}

impl Backbone {
    pub fn new<R: Rng>(config: &ModelConfig, feature_dim: usize, num_classes: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let encoder = GinEncoder::new(&mut store, "encoder", feature_dim, config.hidden, config.layers, rng)
            .with_norm(config.graph_norm);
        let mut widths = vec![config.hidden; config.classifier_layers];
        widths.push(num_classes);
        let classifier = Mlp::new(&mut store, "classifier", &widths, rng);
        Backbone {
            store,
            encoder,
            classifier,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.output_dim()
    }

    /// Logits `[B, C]` for embeddings `[B, d]`.
    pub fn classify(&self, tape: &mut Tape, params: &Bound, embedding: Var) -> Result<Var, TensorError> {
        self.classifier.forward(tape, params, embedding)
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, g: &GraphVars) -> Result<(Encoded, Var), TensorError> {
        let enc = self.encoder.encode(tape, params, g)?;
        let logits = self.classify(tape, params, enc.graph)?;
        Ok((enc, logits))
    }

    fn record(&self, tape: &mut Tape, batch: &GraphBatch, masks: Option<&BatchMasks>) -> Result<(Bound, GraphVars), TensorError> {
        let params = self.store.bind(tape, false);
        let mut g = GraphVars::constant(tape, batch);
        if let Some(masks) = masks {
            masks.check(&batch.layout)?;
            let node = tape.constant(masks.node.clone());
            let edge = tape.constant(masks.edge.clone());
            g = g.masked(tape, node, edge)?;
        }
        Ok((params, g))
    }

    /// Node states `[N, d]` and graph embeddings `[B, d]` without recording gradients.
    pub fn encode_batch(&self, batch: &GraphBatch, masks: Option<&BatchMasks>) -> Result<(Tensor, Tensor), TensorError> {
        let mut tape = Tape::new();
        let (params, g) = self.record(&mut tape, batch, masks)?;
        let enc = self.encoder.encode(&mut tape, &params, &g)?;
        Ok((tape.value(enc.nodes).clone(), tape.value(enc.graph).clone()))
    }

    /// Logits `[B, C]`.
    pub fn logits_batch(&self, batch: &GraphBatch, masks: Option<&BatchMasks>) -> Result<Tensor, TensorError> {
        let mut tape = Tape::new();
        let (params, g) = self.record(&mut tape, batch, masks)?;
        let (_, logits) = self.forward(&mut tape, &params, &g)?;
        Ok(tape.value(logits).clone())
    }

    /// Node states `[n, d]` and the graph embedding `[d]` of one graph.
    pub fn encode(&self, input: &GraphInput, mask: Option<&MaskPair>) -> Result<(Tensor, Tensor), TensorError> {
        let (batch, masks) = single(input, mask)?;
        let (nodes, graph) = self.encode_batch(&batch, masks.as_ref())?;
        let d = graph.len();
        Ok((nodes, graph.reshaped(&[d])?))
    }

    /// Logits `[C]` of one graph.
    pub fn logits(&self, input: &GraphInput, mask: Option<&MaskPair>) -> Result<Tensor, TensorError> {
        let (batch, masks) = single(input, mask)?;
        let logits = self.logits_batch(&batch, masks.as_ref())?;
        logits.reshaped(&[self.num_classes()])
    }

    pub fn logits_of_embedding(&self, embedding: &Tensor) -> Result<Tensor, TensorError> {
        let d = self.encoder.hidden();
        if embedding.shape() != [d] {
            return Err(TensorError::dim(
                "classify",
                format!("embedding shape {:?}, expected [{d}]", embedding.shape()),
            ));
        }
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape, false);
        let e = tape.constant(embedding.clone().reshaped(&[1, d])?);
        let logits = self.classify(&mut tape, &params, e)?;
        tape.value(logits).clone().reshaped(&[self.num_classes()])
    }

    pub fn predict(&self, input: &GraphInput, mask: Option<&MaskPair>) -> Result<usize, TensorError> {
        Ok(argmax(self.logits(input, mask)?.data()))
    }

    /// Predicted class of every graph in a batch.
    pub fn predict_batch(&self, batch: &GraphBatch, masks: Option<&BatchMasks>) -> Result<Vec<usize>, TensorError> {
        let logits = self.logits_batch(batch, masks)?;
        Ok(logits.data().chunks(self.num_classes()).map(argmax).collect())
    }
}

/// A one-graph batch and its packed mask.
fn single(input: &GraphInput, mask: Option<&MaskPair>) -> Result<(GraphBatch, Option<BatchMasks>), TensorError> {
    let batch = GraphBatch::new(std::slice::from_ref(input))?;
    let masks = mask
        .map(|m| BatchMasks::pack(std::slice::from_ref(m), &batch.layout))
        .transpose()?;
    Ok((batch, masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_motif_dataset, Graph, MotifConfig};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            layers: 2,
            hidden: 8,
            classifier_layers: 2,
            mask_layers: 1,
            mask_hidden: 8,
            graph_norm: true,
        }
    }

    fn sample_graph() -> Graph {
        let mut config = MotifConfig::desk_base(3);
        config.envs.truncate(1);
        config.envs[0].per_class = 1;
        generate_motif_dataset(&config).unwrap().remove(1)
    }

    fn permute(g: &Graph, perm: &[usize]) -> Graph {
        let mut out = g.clone();
        out.edges = g
            .edges
            .iter()
            .map(|&[i, j]| {
                let (a, b) = (perm[i], perm[j]);
                [a.min(b), a.max(b)]
            })
            .collect();
        out.edges.sort_unstable();
        for (old, &new) in perm.iter().enumerate() {
            out.features[new] = g.features[old].clone();
            out.causal_nodes[new] = g.causal_nodes[old];
        }
        out
    }

    #[test]
    fn output_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = sample_graph();
        let bb = Backbone::new(&small_config(), g.feature_dim(), 3, &mut rng);
        let (z, emb) = bb.encode(&g.to_input(), None).unwrap();
        assert_eq!(z.shape(), &[g.num_nodes, 8]);
        assert_eq!(emb.shape(), &[8]);
        assert_eq!(bb.logits(&g.to_input(), None).unwrap().shape(), &[3]);
    }

    #[test]
    fn permutation_invariance_of_readout() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = sample_graph();
        let bb = Backbone::new(&small_config(), g.feature_dim(), 3, &mut rng);
        let (z, emb) = bb.encode(&g.to_input(), None).unwrap();
        for _ in 0..5 {
            let mut perm: Vec<usize> = (0..g.num_nodes).collect();
            perm.shuffle(&mut rng);
            let (zp, embp) = bb.encode(&permute(&g, &perm).to_input(), None).unwrap();
            for (a, b) in emb.data().iter().zip(embp.data()) {
                assert!((a - b).abs() < 1e-5);
            }
            for (old, &new) in perm.iter().enumerate() {
                for (a, b) in z.row(old).iter().zip(zp.row(new)) {
                    assert!((a - b).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn unit_mask_is_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = sample_graph();
        let input = g.to_input();
        let bb = Backbone::new(&small_config(), g.feature_dim(), 3, &mut rng);
        let ones = MaskPair::ones_on_support(&input);
        let (z0, e0) = bb.encode(&input, None).unwrap();
        let (z1, e1) = bb.encode(&input, Some(&ones)).unwrap();
        assert!(z0.bit_eq(&z1) && e0.bit_eq(&e1));
    }

    #[test]
    fn zero_edge_mask_isolates_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = sample_graph();
        for row in &mut g.features {
            row.iter_mut().for_each(|v| *v = 1.0);
        }
        let input = g.to_input();
        let bb = Backbone::new(&small_config(), g.feature_dim(), 3, &mut rng);
        let mask = MaskPair {
            node_mask: Tensor::ones(&[g.num_nodes, 1]),
            edge_mask: Tensor::zeros(&[g.num_nodes, g.num_nodes]),
        };
        let (z, _) = bb.encode(&input, Some(&mask)).unwrap();
        for i in 1..g.num_nodes {
            assert_eq!(z.row(i), z.row(0));
        }
    }

    #[test]
    fn single_node_matches_hand_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let config = ModelConfig {
            layers: 1,
            hidden: 2,
            classifier_layers: 1,
            mask_layers: 1,
            mask_hidden: 2,
            graph_norm: false,
        };
        let mut bb = Backbone::new(&config, 1, 2, &mut rng);
        let mlp = &bb.encoder.layers()[0];
        let (w0, b0) = (mlp.layers()[0].weight, mlp.layers()[0].bias);
        let (w1, b1) = (mlp.layers()[1].weight, mlp.layers()[1].bias);
        *bb.store.get_mut(w0) = Tensor::matrix(1, 2, vec![2.0, -1.0]).unwrap();
        *bb.store.get_mut(b0) = Tensor::vector(vec![0.5, 0.5]);
        *bb.store.get_mut(w1) = Tensor::matrix(2, 2, vec![1.0, 0.0, 3.0, 1.0]).unwrap();
        *bb.store.get_mut(b1) = Tensor::vector(vec![0.0, -1.0]);
        let input = GraphInput {
            adjacency: Tensor::zeros(&[1, 1]),
            features: Tensor::matrix(1, 1, vec![1.5]).unwrap(),
            label: 0,
            num_edges: 0,
        };
        // x = 1.5: hidden = [3.5, -1.0] -> relu [3.5, 0] -> [3.5, -1.0]
        let (z, emb) = bb.encode(&input, None).unwrap();
        assert_eq!(z.data(), &[3.5, -1.0]);
        assert_eq!(emb.data(), &[3.5, -1.0]);
    }

    #[test]
    fn classify_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let config = ModelConfig {
            layers: 1,
            hidden: 2,
            classifier_layers: 1,
            mask_layers: 1,
            mask_hidden: 2,
            graph_norm: false,
        };
        let mut bb = Backbone::new(&config, 1, 2, &mut rng);
        let (w, b) = (bb.classifier.layers()[0].weight, bb.classifier.layers()[0].bias);
        let e = Tensor::vector(vec![0.7, -0.2]);

        *bb.store.get_mut(w) = Tensor::zeros(&[2, 2]);
        *bb.store.get_mut(b) = Tensor::zeros(&[2]);
        assert_eq!(bb.logits_of_embedding(&e).unwrap().data(), &[0.0, 0.0]);

        *bb.store.get_mut(w) = Tensor::identity(2);
        assert_eq!(bb.logits_of_embedding(&e).unwrap().data(), e.data());

        *bb.store.get_mut(w) = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        *bb.store.get_mut(b) = Tensor::vector(vec![0.5, 0.0]);
        // [0.7 - 0.6 + 0.5, 1.4 - 0.8]
        let got = bb.logits_of_embedding(&e).unwrap();
        assert!((got.data()[0] - 0.6).abs() < 1e-6 && (got.data()[1] - 0.6).abs() < 1e-6);

        assert!(bb.logits_of_embedding(&Tensor::vector(vec![1.0; 3])).is_err());
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = sample_graph();
        let bb = Backbone::new(&small_config(), g.feature_dim(), 3, &mut rng);
        let bad = MaskPair {
            node_mask: Tensor::ones(&[2, 1]),
            edge_mask: Tensor::ones(&[2, 2]),
        };
        assert!(bb.encode(&g.to_input(), Some(&bad)).is_err());
    }
}
