//! f64 re-implementation of the model used as a finite-difference oracle for
//! the adversarial, causal and causal-regularizer gradients.

use std::collections::HashMap;

use advca_core::engine::{
    record_adversarial, record_causal, GeneratorMode, MaskSource, Method, ModelBundle, TrainConfig, Trainable,
};
use advca_core::gnn::GraphBatch;
use advca_core::params::GradBuffer;
use advca_core::{GraphInput, ModelConfig, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FEATURES: usize = 3;
const NORM_EPS: f64 = 1e-5;
const STEP: f64 = 1e-6;
/// Relative error bound; the denominator is floored so that gradients near zero
/// are judged on absolute error at f32 resolution.
const TOLERANCE: f64 = 1e-4;
const FLOOR: f64 = 1e-2;

#[derive(Clone)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn of(t: &Tensor) -> Self {
        let (rows, cols) = match t.shape() {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            s => panic!("unexpected shape {s:?}"),
        };
        Mat {
            rows,
            cols,
            data: t.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn matmul(&self, o: &Mat) -> Mat {
        assert_eq!(self.cols, o.rows);
        let mut out = Mat::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                for j in 0..o.cols {
                    out.data[i * o.cols + j] += a * o.at(k, j);
                }
            }
        }
        out
    }

    fn zip(&self, o: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    fn add_row(&self, b: &Mat) -> Mat {
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i * self.cols + j] += b.data[j];
            }
        }
        out
    }

    /// Per-column standardization over rows with population variance.
    fn standardize_columns(&self) -> Mat {
        let mut out = self.clone();
        let n = self.rows as f64;
        for j in 0..self.cols {
            let mean = (0..self.rows).map(|i| self.at(i, j)).sum::<f64>() / n;
            let var = (0..self.rows).map(|i| (self.at(i, j) - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            for i in 0..self.rows {
                out.data[i * self.cols + j] = (self.at(i, j) - mean) * inv;
            }
        }
        out
    }

    fn mean_rows(&self) -> Mat {
        let mut out = Mat::zeros(1, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j] += self.at(i, j) / self.rows as f64;
            }
        }
        out
    }

    fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.at(i, j);
            }
        }
        out
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub type Params = HashMap<String, Mat>;

pub struct Oracle<'a> {
    pub p: &'a Params,
    pub layers: usize,
    pub mask_layers: usize,
    pub norm: bool,
}

pub struct Masks {
    node: Mat,
    edge: Mat,
}

impl Oracle<'_> {
    fn linear(&self, x: &Mat, name: &str) -> Mat {
        x.matmul(&self.p[&format!("{name}.weight")]).add_row(&self.p[&format!("{name}.bias")])
    }

    /// Node states and mean readout of a GIN encoder named `prefix`.
    fn encode(&self, prefix: &str, layers: usize, a: &Mat, x: &Mat) -> (Mat, Mat) {
        let mut h = x.clone();
        for l in 0..layers {
            let pre = h.zip(&a.matmul(&h), |u, v| u + v);
            let mut z = self.linear(&pre, &format!("{prefix}.{l}.0"));
            if self.norm {
                z = z.standardize_columns();
            }
            h = self.linear(&z.map(relu), &format!("{prefix}.{l}.1"));
            if l + 1 < layers {
                h = h.map(relu);
            }
        }
        let g = h.mean_rows();
        (h, g)
    }

    pub fn logits(&self, a: &Mat, x: &Mat) -> (Mat, Vec<f64>) {
        let (_, g) = self.encode("backbone.encoder", self.layers, a, x);
        let hidden = self.linear(&g, "backbone.classifier.0").map(relu);
        (g, self.linear(&hidden, "backbone.classifier.1").data)
    }

    fn masks(&self, net: &str, a: &Mat, x: &Mat, support: &Mat) -> Masks {
        let (z, _) = self.encode(&format!("{net}.encoder"), self.mask_layers, a, x);
        let node = self.linear(&z, &format!("{net}.node_head")).map(sigmoid);
        let src = z.matmul(&self.p[&format!("{net}.edge_head.src")]);
        let dst = z.matmul(&self.p[&format!("{net}.edge_head.dst")]);
        let b = self.p[&format!("{net}.edge_head.bias")].data[0];
        let n = a.rows;
        let mut raw = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                raw.data[i * n + j] = sigmoid(src.data[i] + dst.data[j] + b);
            }
        }
        let edge = raw.zip(&raw.transpose(), |u, v| 0.5 * (u + v)).zip(support, |u, s| u * s);
        Masks { node, edge }
    }
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - logits[label]
}

pub fn apply(a: &Mat, x: &Mat, m: &Masks) -> (Mat, Mat) {
    let n = x.rows;
    let mut xm = x.clone();
    for i in 0..n {
        for j in 0..x.cols {
            xm.data[i * x.cols + j] *= m.node.data[i];
        }
    }
    (a.zip(&m.edge, |u, v| u * v), xm)
}

pub fn regularizer(m: &Masks, n: usize, k_edges: usize, lambda: f64, tau: f64) -> f64 {
    let term = |sum: f64, count: f64, k: f64| (sum / k - lambda).abs() + (count / k - lambda).abs();
    let node_sum: f64 = m.node.data.iter().sum();
    let node_count = m.node.data.iter().filter(|&&v| v > tau).count() as f64;
    let edge_sum: f64 = m.edge.data.iter().sum::<f64>() * 0.5;
    let edge_count = m.edge.data.iter().filter(|&&v| v > tau).count() as f64 * 0.5;
    term(node_sum, node_count, n as f64) + term(edge_sum, edge_count, k_edges as f64)
}

#[derive(Clone, Copy, Debug)]
pub enum Term {
    Adversarial,
    Causal,
    CausalReg,
}

pub fn oracle_value(term: Term, p: &Params, model: &ModelConfig, input: &GraphInput, cfg: &TrainConfig) -> f64 {
    let o = Oracle {
        p,
        layers: model.layers,
        mask_layers: model.mask_layers,
        norm: model.graph_norm,
    };
    let a = Mat::of(&input.adjacency);
    let x = Mat::of(&input.features);
    let support = Mat::of(&input.support());
    match term {
        Term::Adversarial => {
            let m = o.masks("augmenter", &a, &x, &support);
            let (ta, tx) = apply(&a, &x, &m);
            let (g_aug, logits) = o.logits(&ta, &tx);
            let (_, g) = o.encode("backbone.encoder", model.layers, &a, &x);
            let cost: f64 = g_aug.data.iter().zip(&g.data).map(|(u, v)| (u - v).powi(2)).sum();
            cross_entropy(&logits, input.label) - f64::from(cfg.gamma) * cost
        }
        Term::Causal => {
            let adv = o.masks("augmenter", &a, &x, &support);
            let cau = o.masks("generator", &a, &x, &support);
            let (ca, cx) = apply(&a, &x, &cau);
            let (_, l2) = o.logits(&ca, &cx);
            let mixed = Masks {
                node: adv.node.zip(&cau.node, |u, c| c + u * (1.0 - c)),
                edge: adv.edge.zip(&cau.edge, |u, c| c + u * (1.0 - c)),
            };
            let (ma, mx) = apply(&a, &x, &mixed);
            let (_, lt) = o.logits(&ma, &mx);
            cross_entropy(&l2, input.label) + cross_entropy(&lt, input.label)
        }
        Term::CausalReg => {
            let cau = o.masks("generator", &a, &x, &support);
            regularizer(&cau, input.num_nodes(), input.num_edges, f64::from(cfg.lambda_c), f64::from(cfg.tau))
        }
    }
}

pub fn random_graph(rng: &mut ChaCha8Rng) -> GraphInput {
    let n = rng.gen_range(3..=8);
    let mut adjacency = Tensor::zeros(&[n, n]);
    let mut edges = 0;
    let mut link = |a: &mut Tensor, i: usize, j: usize| {
        if a.at2(i, j) == 0.0 {
            a.set2(i, j, 1.0);
            a.set2(j, i, 1.0);
            edges += 1;
        }
    };
    for i in 1..n {
        let j = rng.gen_range(0..i);
        link(&mut adjacency, i, j);
    }
    for _ in 0..rng.gen_range(0..n) {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if i != j {
            link(&mut adjacency, i, j);
        }
    }
    let features = Tensor::new(vec![n, FEATURES], (0..n * FEATURES).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    GraphInput {
        adjacency,
        features,
        label: rng.gen_range(0..3),
        num_edges: edges,
    }
}

pub fn model() -> ModelConfig {
    ModelConfig {
        layers: 2,
        hidden: 4,
        classifier_layers: 2,
        mask_layers: 1,
        mask_hidden: 4,
        graph_norm: true,
    }
}

/// Library gradients of the batch mean of `term`, keyed by prefixed parameter name.
pub fn analytic(term: Term, bundle: &ModelBundle, inputs: &[GraphInput], cfg: &TrainConfig) -> HashMap<String, Vec<f64>> {
    let batch = GraphBatch::new(inputs).unwrap();
    let mut tape = Tape::new();
    let all = Trainable {
        backbone: true,
        augmenter: true,
        generator: true,
    };
    let bound = bundle.bind(&mut tape, all);
    let root = match term {
        Term::Adversarial => record_adversarial(&mut tape, bundle, &bound, &batch, cfg).unwrap().l_adv,
        Term::Causal | Term::CausalReg => {
            let t = record_causal(&mut tape, bundle, &bound, &batch, MaskSource::Augmenter, GeneratorMode::Learned, cfg)
                .unwrap();
            if matches!(term, Term::Causal) {
                t.l_cau
            } else {
                t.reg
            }
        }
    };
    tape.backward(root).unwrap();
    let mut out = HashMap::new();
    let stores: [(&str, &ParamStore, _); 3] = [
        ("backbone", &bundle.backbone.store, &bound.backbone),
        ("augmenter", &bundle.augmenter.as_ref().unwrap().store, bound.augmenter.as_ref().unwrap()),
        ("generator", &bundle.generator.as_ref().unwrap().store, bound.generator.as_ref().unwrap()),
    ];
    for (prefix, store, b) in stores {
        let mut grads = GradBuffer::zeros_like(store);
        grads.accumulate(&tape, b, 1.0);
        for (name, _) in store.iter() {
            let id = store.find(name).unwrap();
            let g = grads.get(id).data().iter().map(|&v| f64::from(v)).collect();
            out.insert(format!("{prefix}.{name}"), g);
        }
    }
    out
}

/// Which stores a term is differentiated against in training.
pub fn trained_prefixes(term: Term) -> &'static [&'static str] {
    match term {
        Term::Adversarial => &["backbone.", "augmenter."],
        Term::Causal => &["backbone.", "generator."],
        Term::CausalReg => &["generator."],
    }
}

/// Compares every trained partial of every term on `trials` random graphs.
/// Returns the number of partials checked and the worst relative error.
pub fn check_gradients(trials: u64, seed: u64) -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TrainConfig::default();
    let model = model();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for trial in 0..trials {
        let input = random_graph(&mut rng);
        let bundle = ModelBundle::new(&model, Method::ADVCA, FEATURES, 3, seed.wrapping_add(100 + trial));
        let base: Params = bundle.named_tensors().iter().map(|(n, t)| (n.clone(), Mat::of(t))).collect();
        for term in [Term::Adversarial, Term::Causal, Term::CausalReg] {
            let grads = analytic(term, &bundle, std::slice::from_ref(&input), &cfg);
            for (name, g) in &grads {
                let trained = trained_prefixes(term).iter().any(|p| name.starts_with(p));
                for (i, &a) in g.iter().enumerate() {
                    if !trained {
                        if a != 0.0 {
                            return Err(format!("{term:?}: {name}[{i}] receives gradient {a}"));
                        }
                        continue;
                    }
                    let mut p = base.clone();
                    p.get_mut(name).unwrap().data[i] += STEP;
                    let up = oracle_value(term, &p, &model, &input, &cfg);
                    p.get_mut(name).unwrap().data[i] -= 2.0 * STEP;
                    let down = oracle_value(term, &p, &model, &input, &cfg);
                    let numeric = (up - down) / (2.0 * STEP);
                    let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
                    worst = worst.max(err);
                    checked += 1;
                    if err >= TOLERANCE {
                        return Err(format!(
                            "trial {trial} {term:?} {name}[{i}]: analytic {a} vs numeric {numeric} (rel {err:e})"
                        ));
                    }
                }
            }
        }
    }
    Ok((checked, worst))
}
