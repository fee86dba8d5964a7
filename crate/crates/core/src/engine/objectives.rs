use std::rc::Rc;

use super::{BoundBundle, EngineError, GeneratorMode, ModelBundle, TrainConfig, Trainable};
use crate::autodiff::{Tape, Var};
use crate::gnn::{BatchMasks, GraphBatch, GraphVars, MaskPair, MaskVars};
use crate::graph::GraphInput;
use crate::tensor::{Tensor, TensorError};

/// `m̃ = m_cau + m_adv ⊙ (1 − m_cau)` on nodes and edges.
pub fn combine_masks(adv: &MaskPair, cau: &MaskPair) -> Result<MaskPair, TensorError> {
    cau.check(adv.num_nodes())?;
    let mix = |a: &Tensor, c: &Tensor| {
        let data = a
            .data()
            .iter()
            .zip(c.data())
            .map(|(&a, &c)| c + a * (1.0 - c))
            .collect();
        Tensor::new(a.shape().to_vec(), data)
    };
    Ok(MaskPair {
        node_mask: mix(&adv.node_mask, &cau.node_mask)?,
        edge_mask: mix(&adv.edge_mask, &cau.edge_mask)?,
    })
}

pub fn combine_mask_vars(tape: &mut Tape, adv: MaskVars, cau: MaskVars) -> Result<MaskVars, TensorError> {
    let one = tape.constant(Tensor::scalar(1.0));
    let mut mix = |a: Var, c: Var| -> Result<Var, TensorError> {
        let keep = tape.sub(one, c)?;
        let moved = tape.mul(a, keep)?;
        tape.add(c, moved)
    };
    Ok(MaskVars {
        node: mix(adv.node, cau.node)?,
        edge: mix(adv.edge, cau.edge)?,
    })
}

fn check_counts(ks: &[usize]) -> Result<(), EngineError> {
    if ks.iter().any(|&k| k == 0) {
        return Err(EngineError::Argument(
            "regularizer needs at least one constrained element".into(),
        ));
    }
    Ok(())
}

/// `r(M, k, λ) = |ΣM/k − λ| + |#{M > τ}/k − λ|` over the listed mask values.
pub fn regularizer(values: &[f32], k: usize, lambda: f32, tau: f32) -> Result<f32, EngineError> {
    check_counts(&[k])?;
    let k = k as f32;
    let sum: f32 = values.iter().sum();
    let count = values.iter().filter(|&&v| v > tau).count() as f32;
    Ok((sum / k - lambda).abs() + (count / k - lambda).abs())
}

/// Tape form of [`regularizer`], one value per segment of the flat `mask`
/// (segments delimited by `offsets`, counts `ks`), returned as `[B, 1]`.
/// `pair_weight` is 0.5 for a symmetric edge mask, whose two entries per
/// undirected edge count as one element. The counting term is recorded as a
/// constant.
pub fn regularizer_var(
    tape: &mut Tape,
    mask: Var,
    offsets: &Rc<[usize]>,
    ks: &[usize],
    lambda: f32,
    tau: f32,
    pair_weight: f32,
) -> Result<Var, EngineError> {
    check_counts(ks)?;
    if ks.len() + 1 != offsets.len() {
        return Err(EngineError::Argument(format!("{} counts for {} segments", ks.len(), offsets.len() - 1)));
    }
    let b = ks.len();
    let values = tape.value(mask).data();
    let count_terms: Vec<f32> = offsets
        .windows(2)
        .zip(ks)
        .map(|(w, &k)| {
            let count = values[w[0]..w[1]].iter().filter(|&&v| v > tau).count() as f32 * pair_weight;
            (count / k as f32 - lambda).abs()
        })
        .collect();
    let scales: Vec<f32> = ks.iter().map(|&k| pair_weight / k as f32).collect();

    let totals = tape.segment_sum(mask, offsets)?;
    let scales = tape.constant(Tensor::new(vec![b, 1], scales)?);
    let ratio = tape.mul(totals, scales)?;
    let target = tape.constant(Tensor::scalar(lambda));
    let dev = tape.sub(ratio, target)?;
    let dev = tape.abs(dev);
    let counts = tape.constant(Tensor::new(vec![b, 1], count_terms)?);
    Ok(tape.add(dev, counts)?)
}

/// Per-graph `r(M^x, n, λ) + r(M^a, m, λ)` as `[B, 1]`.
fn mask_regularizer(
    tape: &mut Tape,
    masks: MaskVars,
    batch: &GraphBatch,
    lambda: f32,
    tau: f32,
) -> Result<Var, EngineError> {
    let layout = &batch.layout;
    let node_offsets: Rc<[usize]> = Rc::from(layout.node_offsets());
    let block_offsets: Rc<[usize]> = Rc::from(layout.block_offsets());
    let sizes: Vec<usize> = (0..layout.len()).map(|g| layout.size(g)).collect();
    let node = regularizer_var(tape, masks.node, &node_offsets, &sizes, lambda, tau, 1.0)?;
    let edge = regularizer_var(tape, masks.edge, &block_offsets, &batch.num_edges, lambda, tau, 0.5)?;
    Ok(tape.add(node, edge)?)
}

fn detach(tape: &mut Tape, v: Var) -> Var {
    let value = tape.value(v).clone();
    tape.constant(value)
}

fn graph_and_support(tape: &mut Tape, batch: &GraphBatch) -> (GraphVars, Var) {
    let g = GraphVars::constant(tape, batch);
    let support = tape.constant(batch.support());
    (g, support)
}

fn constant_masks(tape: &mut Tape, masks: &BatchMasks) -> MaskVars {
    MaskVars {
        node: tape.constant(masks.node.clone()),
        edge: tape.constant(masks.edge.clone()),
    }
}

/// Per-graph squared distance of `[B, d]` embeddings, as `[B, 1]`.
fn row_distances(tape: &mut Tape, a: Var, b: Var) -> Result<Var, TensorError> {
    let rows = tape.value(a).shape()[0];
    let diff = tape.sub(a, b)?;
    let sq = tape.mul(diff, diff)?;
    let per = tape.sum(sq, Some(1))?;
    tape.reshape(per, &[rows, 1])
}

/// Terms of the adversarial objective, each a batch mean.
#[derive(Debug, Clone, Copy)]
pub struct AdvTerms {
    pub masks: MaskVars,
    /// `[B, C]`.
    pub logits: Var,
    pub ce: Var,
    /// `‖h(T1 g) − h(g)‖²`.
    pub cost: Var,
    /// `ℓ(f(T1 g), y) − γ·cost`.
    pub l_adv: Var,
    /// `r(M^x_adv, n, λ_a) + r(M^a_adv, m, λ_a)`.
    pub reg: Var,
    /// `l_adv − reg`, the quantity the augmenter ascends.
    pub objective: Var,
}

pub fn record_adversarial(
    tape: &mut Tape,
    bundle: &ModelBundle,
    bound: &BoundBundle,
    batch: &GraphBatch,
    config: &TrainConfig,
) -> Result<AdvTerms, EngineError> {
    let (augmenter, aug_params) = bundle
        .augmenter
        .as_ref()
        .zip(bound.augmenter.as_ref())
        .ok_or_else(|| EngineError::Argument("adversarial objective needs an augmenter".into()))?;
    let (g, support) = graph_and_support(tape, batch);
    let masks = augmenter.forward(tape, aug_params, &g, support)?;
    let t1 = g.masked(tape, masks.node, masks.edge)?;
    let (enc_aug, logits) = bundle.backbone.forward(tape, &bound.backbone, &t1)?;
    let enc = bundle.backbone.encoder.encode(tape, &bound.backbone, &g)?;
    let ce_rows = tape.cross_entropy_rows(logits, &batch.labels)?;
    let cost_rows = row_distances(tape, enc_aug.graph, enc.graph)?;
    let penalty = tape.scale(cost_rows, config.gamma);
    let l_adv_rows = tape.sub(ce_rows, penalty)?;
    let reg_rows = mask_regularizer(tape, masks, batch, config.lambda_a, config.tau)?;
    let objective_rows = tape.sub(l_adv_rows, reg_rows)?;
    Ok(AdvTerms {
        masks,
        logits,
        ce: tape.mean(ce_rows, None)?,
        cost: tape.mean(cost_rows, None)?,
        l_adv: tape.mean(l_adv_rows, None)?,
        reg: tape.mean(reg_rows, None)?,
        objective: tape.mean(objective_rows, None)?,
    })
}

/// Where the perturbation masks of the causal objective come from.
#[derive(Debug, Clone, Copy)]
pub enum MaskSource<'a> {
    /// The bundle's augmenter, detached from the tape.
    Augmenter,
    Fixed(&'a BatchMasks),
}

/// Terms of the causal objective, each a batch mean.
#[derive(Debug, Clone, Copy)]
pub struct CausalTerms {
    /// Causal masks, `None` without a causal branch.
    pub masks: Option<MaskVars>,
    /// Logits `[B, C]` of the prediction path.
    pub logits: Var,
    /// `ℓ(f(T2 g), y) + ℓ(f(g̃), y)`.
    pub l_cau: Var,
    /// `r(M^x_cau, n, λ_c) + r(M^a_cau, m, λ_c)`; zero unless the generator is learned.
    pub reg: Var,
    /// `l_cau + reg`, the quantity the backbone and generator descend.
    pub total: Var,
}

pub fn record_causal(
    tape: &mut Tape,
    bundle: &ModelBundle,
    bound: &BoundBundle,
    batch: &GraphBatch,
    adv: MaskSource<'_>,
    generator: GeneratorMode,
    config: &TrainConfig,
) -> Result<CausalTerms, EngineError> {
    let (g, support) = graph_and_support(tape, batch);
    let adv_masks = match adv {
        MaskSource::Fixed(masks) => {
            masks.check(&batch.layout)?;
            constant_masks(tape, masks)
        }
        MaskSource::Augmenter => {
            let (augmenter, params) = bundle
                .augmenter
                .as_ref()
                .zip(bound.augmenter.as_ref())
                .ok_or_else(|| EngineError::Argument("no augmenter to draw masks from".into()))?;
            let m = augmenter.forward(tape, params, &g, support)?;
            MaskVars {
                node: detach(tape, m.node),
                edge: detach(tape, m.edge),
            }
        }
    };
    let backbone = &bundle.backbone;

    if generator == GeneratorMode::Absent {
        let (_, logits) = backbone.forward(tape, &bound.backbone, &g)?;
        let t1 = g.masked(tape, adv_masks.node, adv_masks.edge)?;
        let (_, logits_aug) = backbone.forward(tape, &bound.backbone, &t1)?;
        let ce = tape.cross_entropy_rows(logits, &batch.labels)?;
        let ce_aug = tape.cross_entropy_rows(logits_aug, &batch.labels)?;
        let rows = tape.add(ce, ce_aug)?;
        let l_cau = tape.mean(rows, None)?;
        let reg = tape.constant(Tensor::scalar(0.0));
        let total = tape.add(l_cau, reg)?;
        return Ok(CausalTerms {
            masks: None,
            logits,
            l_cau,
            reg,
            total,
        });
    }

    let cau_masks = match generator {
        GeneratorMode::Learned => {
            let (net, params) = bundle
                .generator
                .as_ref()
                .zip(bound.generator.as_ref())
                .ok_or_else(|| EngineError::Argument("causal objective needs a generator".into()))?;
            net.forward(tape, params, &g, support)?
        }
        _ => constant_masks(tape, &BatchMasks::ones_on_support(batch)),
    };
    let t2 = g.masked(tape, cau_masks.node, cau_masks.edge)?;
    let (_, logits) = backbone.forward(tape, &bound.backbone, &t2)?;
    let mixed = combine_mask_vars(tape, adv_masks, cau_masks)?;
    let tilde = g.masked(tape, mixed.node, mixed.edge)?;
    let (_, logits_tilde) = backbone.forward(tape, &bound.backbone, &tilde)?;
    let ce = tape.cross_entropy_rows(logits, &batch.labels)?;
    let ce_tilde = tape.cross_entropy_rows(logits_tilde, &batch.labels)?;
    let rows = tape.add(ce, ce_tilde)?;
    let l_cau = tape.mean(rows, None)?;
    let reg = if generator == GeneratorMode::Learned {
        let rows = mask_regularizer(tape, cau_masks, batch, config.lambda_c, config.tau)?;
        tape.mean(rows, None)?
    } else {
        tape.constant(Tensor::scalar(0.0))
    };
    let total = tape.add(l_cau, reg)?;
    Ok(CausalTerms {
        masks: Some(cau_masks),
        logits,
        l_cau,
        reg,
        total,
    })
}

/// `‖h(g_aug) − h(g)‖²` on graph embeddings, `g_aug = (A ⊙ M^a, X ⊙ M^x)`.
pub fn transport_cost(bundle: &ModelBundle, input: &GraphInput, mask: &MaskPair) -> Result<f32, EngineError> {
    let (_, aug) = bundle.backbone.encode(input, Some(mask))?;
    let (_, orig) = bundle.backbone.encode(input, None)?;
    Ok(aug
        .data()
        .iter()
        .zip(orig.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Batch mean of `ℓ(f(T1 g), y) − γ·c(T1 g, g)`.
pub fn adversarial_loss(batch: &[GraphInput], bundle: &ModelBundle, gamma: f32) -> Result<f32, EngineError> {
    let batch = GraphBatch::new(batch).map_err(|_| EngineError::Argument("empty batch".into()))?;
    let config = TrainConfig {
        gamma,
        ..TrainConfig::default()
    };
    let mut tape = Tape::new();
    let bound = bundle.bind(&mut tape, Trainable::default());
    let terms = record_adversarial(&mut tape, bundle, &bound, &batch, &config)?;
    Ok(tape.value(terms.l_adv).item()?)
}

/// Batch mean of `ℓ(f(T2 g), y) + ℓ(f(g̃), y)`. Perturbation masks come from the
/// augmenter when the bundle has one, otherwise they are ≡ 1.
pub fn causal_loss(batch: &[GraphInput], bundle: &ModelBundle) -> Result<f32, EngineError> {
    let batch = GraphBatch::new(batch).map_err(|_| EngineError::Argument("empty batch".into()))?;
    let generator = if bundle.generator.is_some() {
        GeneratorMode::Learned
    } else {
        GeneratorMode::Identity
    };
    let mut tape = Tape::new();
    let bound = bundle.bind(&mut tape, Trainable::default());
    let ones = BatchMasks::ones_on_support(&batch);
    let source = if bundle.augmenter.is_some() {
        MaskSource::Augmenter
    } else {
        MaskSource::Fixed(&ones)
    };
    let terms = record_causal(&mut tape, bundle, &bound, &batch, source, generator, &TrainConfig::default())?;
    Ok(tape.value(terms.l_cau).item()?)
}
