use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{dropedge_input, rdca_random_masks};
use super::metrics::EpochMetrics;
use super::objectives::{record_adversarial, record_causal, MaskSource};
use super::{AugmenterMode, EngineError, Method, ModelBundle, TrainConfig, Trainable};
use crate::autodiff::Tape;
use crate::gnn::{argmax, Backbone, BatchMasks, GraphBatch, GraphVars, MaskPair};
use crate::graph::{DatasetSplit, Graph, GraphInput};
use crate::params::{Direction, GradBuffer, Optimizer, ParamStore};

/// Batch means of one optimization step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    /// The optimized objective.
    pub objective: f32,
    /// `L_adv` (ascent) or `L_cau` (descent, AdvCA methods only).
    pub main: Option<f32>,
    /// `L_reg1` or `L_reg2`.
    pub reg: Option<f32>,
    /// Correct predictions of the prediction path (descent only).
    pub correct: usize,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub loss: f32,
    pub accuracy: f32,
    /// Mean causal node mask over ground-truth causal and environment nodes.
    pub mask_causal: Option<f32>,
    pub mask_env: Option<f32>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best-validation epoch.
    pub bundle: ModelBundle,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_acc: f32,
    pub test_acc: f32,
    pub partition_checks: usize,
}

fn mean(total: f32, count: usize) -> f32 {
    total / count as f32
}

fn pack(batch: &[GraphInput]) -> Result<GraphBatch, EngineError> {
    if batch.is_empty() {
        return Err(EngineError::Argument("empty batch".into()));
    }
    Ok(GraphBatch::new(batch)?)
}

fn count_correct(logits: &[f32], labels: &[usize]) -> usize {
    let classes = logits.len() / labels.len().max(1);
    logits
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

/// Gradients of `loss_scale · mean CE(f(g))` over `batch` for the backbone.
fn backbone_grads(
    backbone: &Backbone,
    batch: &[GraphInput],
    loss_scale: f32,
) -> Result<(GradBuffer, f32, usize), EngineError> {
    let packed = pack(batch)?;
    let mut grads = GradBuffer::zeros_like(&backbone.store);
    let mut tape = Tape::new();
    let params = backbone.store.bind(&mut tape, true);
    let g = GraphVars::constant(&mut tape, &packed);
    let (_, logits) = backbone.forward(&mut tape, &params, &g)?;
    let ce = tape.cross_entropy_rows(logits, &packed.labels)?;
    let ce = tape.mean(ce, None)?;
    let loss = tape.scale(ce, loss_scale);
    tape.backward(loss)?;
    grads.accumulate(&tape, &params, 1.0);
    let correct = count_correct(tape.value(logits).data(), &packed.labels);
    Ok((grads, tape.value(loss).item()?, correct))
}

/// One descent step of `loss_scale · ℓ(f(g), y)` averaged over `batch`.
pub fn erm_step(
    backbone: &mut Backbone,
    batch: &[GraphInput],
    optimizer: &mut Optimizer,
    loss_scale: f32,
) -> Result<f32, EngineError> {
    let (grads, loss, _) = backbone_grads(backbone, batch, loss_scale)?;
    optimizer.apply(&mut backbone.store, &grads);
    Ok(loss)
}

/// Graphs per forward pass in [`evaluate`].
const EVAL_CHUNK: usize = 256;

/// Accuracy, mean cross-entropy and mask statistics of the prediction rule:
/// `argmax f(T2 g)` when the bundle has a causal generator, `argmax f(g)` otherwise.
pub fn evaluate(bundle: &ModelBundle, graphs: &[Graph]) -> Result<EvalStats, EngineError> {
    if graphs.is_empty() {
        return Err(EngineError::Argument("nothing to evaluate".into()));
    }
    let (mut loss, mut correct) = (0.0f64, 0usize);
    let (mut cau_sum, mut cau_n, mut env_sum, mut env_n) = (0.0f64, 0usize, 0.0f64, 0usize);
    let classes = bundle.backbone.num_classes();
    for chunk in graphs.chunks(EVAL_CHUNK) {
        let inputs: Vec<GraphInput> = chunk.iter().map(Graph::to_input).collect();
        let batch = GraphBatch::new(&inputs)?;
        let masks = match &bundle.generator {
            Some(net) => Some(net.masks_batch(&batch)?),
            None => None,
        };
        let logits = bundle.backbone.logits_batch(&batch, masks.as_ref())?;
        for (values, g) in logits.data().chunks(classes).zip(chunk) {
            let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = max + values.iter().map(|v| (v - max).exp()).sum::<f32>().ln();
            loss += f64::from(lse - values[g.label]);
            correct += usize::from(argmax(values) == g.label);
        }
        if let Some(m) = &masks {
            let causal = chunk.iter().flat_map(|g| g.causal_nodes.iter());
            for (&v, &causal) in m.node.data().iter().zip(causal) {
                if causal {
                    cau_sum += f64::from(v);
                    cau_n += 1;
                } else {
                    env_sum += f64::from(v);
                    env_n += 1;
                }
            }
        }
    }
    let avg = |s: f64, n: usize| (n > 0).then(|| (s / n as f64) as f32);
    Ok(EvalStats {
        loss: (loss / graphs.len() as f64) as f32,
        accuracy: correct as f32 / graphs.len() as f32,
        mask_causal: avg(cau_sum, cau_n),
        mask_env: avg(env_sum, env_n),
    })
}

/// Predicted class of one graph under the rule of [`evaluate`].
pub fn predict(bundle: &ModelBundle, input: &GraphInput) -> Result<usize, EngineError> {
    let masks = match &bundle.generator {
        Some(net) => Some(net.masks(input)?),
        None => None,
    };
    Ok(bundle.backbone.predict(input, masks.as_ref())?)
}

/// Mini-batch trainer for every [`Method`].
///
/// AdvCA batches run one ascent step on the augmenter, then a fresh forward and
/// one descent step on the backbone and causal generator.
#[derive(Debug)]
pub struct Trainer {
    bundle: ModelBundle,
    method: Method,
    config: TrainConfig,
    opt_backbone: Optimizer,
    opt_augmenter: Optimizer,
    opt_generator: Optimizer,
    rng: ChaCha8Rng,
    epoch: usize,
    batch: usize,
    partition_checks: usize,
}

impl Trainer {
    pub fn new(bundle: ModelBundle, method: Method, config: TrainConfig) -> Result<Self, EngineError> {
        config.validate()?;
        if method.has_learned_augmenter() != bundle.augmenter.is_some()
            || method.has_learned_generator() != bundle.generator.is_some()
        {
            return Err(EngineError::Argument(format!(
                "bundle networks do not match method {method}"
            )));
        }
        Ok(Trainer {
            opt_backbone: Optimizer::new(config.optimizer, config.beta, Direction::Descent),
            opt_augmenter: Optimizer::new(config.optimizer, config.alpha, Direction::Ascent),
            opt_generator: Optimizer::new(config.optimizer, config.beta, Direction::Descent),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c),
            bundle,
            method,
            config,
            epoch: 0,
            batch: 0,
            partition_checks: 0,
        })
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn bundle_mut(&mut self) -> &mut ModelBundle {
        &mut self.bundle
    }

    pub fn into_bundle(self) -> ModelBundle {
        self.bundle
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn partition_checks(&self) -> usize {
        self.partition_checks
    }

    fn diverged(&self, what: &'static str) -> EngineError {
        EngineError::Diverged {
            epoch: self.epoch,
            batch: self.batch,
            what,
        }
    }

    /// Mean of `L_adv − L_reg1` over `batch` under the current augmenter.
    pub fn adversarial_objective(&self, batch: &[GraphInput]) -> Result<f32, EngineError> {
        let packed = pack(batch)?;
        let mut tape = Tape::new();
        let bound = self.bundle.bind(&mut tape, Trainable::default());
        let terms = record_adversarial(&mut tape, &self.bundle, &bound, &packed, &self.config)?;
        Ok(tape.value(terms.objective).item()?)
    }

    /// `θ1 ← θ1 + α ∇θ1 (L_adv − L_reg1)`. A no-op for methods without a learned
    /// augmenter.
    pub fn ascent_step(&mut self, batch: &[GraphInput]) -> Result<StepStats, EngineError> {
        let packed = pack(batch)?;
        let Some(augmenter) = &self.bundle.augmenter else {
            return Ok(StepStats::default());
        };
        let mut grads = GradBuffer::zeros_like(&augmenter.store);
        let trainable = Trainable {
            augmenter: true,
            ..Trainable::default()
        };
        let mut tape = Tape::new();
        let bound = self.bundle.bind(&mut tape, trainable);
        let terms = record_adversarial(&mut tape, &self.bundle, &bound, &packed, &self.config)?;
        tape.backward(terms.objective)?;
        grads.accumulate(&tape, bound.augmenter.as_ref().expect("bound augmenter"), 1.0);
        let objective = tape.value(terms.objective).item()?;
        if !objective.is_finite() {
            return Err(self.diverged("adversarial objective"));
        }
        if !grads.all_finite() {
            return Err(self.diverged("augmenter gradient"));
        }
        let augmenter = self.bundle.augmenter.as_mut().expect("checked above");
        self.opt_augmenter.apply(&mut augmenter.store, &grads);
        Ok(StepStats {
            objective,
            main: Some(tape.value(terms.l_adv).item()?),
            reg: Some(tape.value(terms.reg).item()?),
            correct: 0,
            count: batch.len(),
        })
    }

    /// `θ ← θ − β ∇θ (L_cau + L_reg2)` and the same for `θ2`; the plain
    /// cross-entropy step for ERM and DropEdge.
    pub fn descent_step(&mut self, batch: &[GraphInput]) -> Result<StepStats, EngineError> {
        let packed = pack(batch)?;
        let (augmenter_mode, generator_mode) = match self.method {
            Method::Erm | Method::DropEdge => return self.plain_step(batch),
            Method::Advca {
                augmenter,
                generator,
            } => (augmenter, generator),
        };
        let mut grads_backbone = GradBuffer::zeros_like(&self.bundle.backbone.store);
        let mut grads_generator = self
            .bundle
            .generator
            .as_ref()
            .map(|g| GradBuffer::zeros_like(&g.store));
        let trainable = Trainable {
            backbone: true,
            augmenter: false,
            generator: true,
        };
        let fixed = match augmenter_mode {
            AugmenterMode::Adversarial => None,
            AugmenterMode::Identity => Some(BatchMasks::ones_on_support(&packed)),
            AugmenterMode::Random => {
                let masks: Vec<MaskPair> = batch.iter().map(|g| rdca_random_masks(g, &mut self.rng)).collect();
                Some(BatchMasks::pack(&masks, &packed.layout)?)
            }
        };
        let source = fixed.as_ref().map_or(MaskSource::Augmenter, MaskSource::Fixed);
        let mut tape = Tape::new();
        let bound = self.bundle.bind(&mut tape, trainable);
        let terms = record_causal(
            &mut tape,
            &self.bundle,
            &bound,
            &packed,
            source,
            generator_mode,
            &self.config,
        )?;
        tape.backward(terms.total)?;
        grads_backbone.accumulate(&tape, &bound.backbone, 1.0);
        if let (Some(buf), Some(b)) = (grads_generator.as_mut(), bound.generator.as_ref()) {
            buf.accumulate(&tape, b, 1.0);
        }
        let objective = tape.value(terms.total).item()?;
        if !objective.is_finite() {
            return Err(self.diverged("causal objective"));
        }
        if !grads_backbone.all_finite() || grads_generator.as_ref().is_some_and(|g| !g.all_finite()) {
            return Err(self.diverged("descent gradient"));
        }
        self.opt_backbone.apply(&mut self.bundle.backbone.store, &grads_backbone);
        if let (Some(net), Some(grads)) = (self.bundle.generator.as_mut(), grads_generator.as_ref()) {
            self.opt_generator.apply(&mut net.store, grads);
        }
        Ok(StepStats {
            objective,
            main: Some(tape.value(terms.l_cau).item()?),
            reg: Some(tape.value(terms.reg).item()?),
            correct: count_correct(tape.value(terms.logits).data(), &packed.labels),
            count: batch.len(),
        })
    }

    fn plain_step(&mut self, batch: &[GraphInput]) -> Result<StepStats, EngineError> {
        let augmented: Vec<GraphInput>;
        let inputs = if self.method == Method::DropEdge {
            augmented = batch
                .iter()
                .map(|g| dropedge_input(g, self.config.dropedge_p, &mut self.rng))
                .collect();
            &augmented[..]
        } else {
            batch
        };
        let (grads, loss, correct) = backbone_grads(&self.bundle.backbone, inputs, 1.0)?;
        if !loss.is_finite() {
            return Err(self.diverged("loss"));
        }
        if !grads.all_finite() {
            return Err(self.diverged("gradient"));
        }
        self.opt_backbone.apply(&mut self.bundle.backbone.store, &grads);
        Ok(StepStats {
            objective: loss,
            main: None,
            reg: None,
            correct,
            count: batch.len(),
        })
    }

    fn snapshot(store: Option<&ParamStore>) -> Option<ParamStore> {
        store.cloned()
    }

    fn verify(&mut self, before: Option<ParamStore>, after: Option<&ParamStore>, what: &str) -> Result<(), EngineError> {
        self.partition_checks += 1;
        match (before, after) {
            (Some(b), Some(a)) if !b.bit_eq(a) => Err(EngineError::Partition(format!(
                "{what} changed at epoch {}, batch {}",
                self.epoch, self.batch
            ))),
            _ => Ok(()),
        }
    }

    /// Ascent then descent on one batch, with partition checks when configured.
    pub fn train_batch(&mut self, batch: &[GraphInput]) -> Result<(StepStats, StepStats), EngineError> {
        let verify = self.config.verify_partition;
        let before = verify.then(|| {
            (
                self.bundle.backbone.store.clone(),
                Self::snapshot(self.bundle.generator.as_ref().map(|g| &g.store)),
            )
        });
        let ascent = self.ascent_step(batch)?;
        if let Some((backbone, generator)) = before {
            let now_backbone = self.bundle.backbone.store.clone();
            self.verify(Some(backbone), Some(&now_backbone), "backbone during ascent")?;
            let now_generator = self.bundle.generator.as_ref().map(|g| g.store.clone());
            self.verify(generator, now_generator.as_ref(), "generator during ascent")?;
        }
        let before = verify.then(|| Self::snapshot(self.bundle.augmenter.as_ref().map(|a| &a.store)));
        let descent = self.descent_step(batch)?;
        if let Some(augmenter) = before {
            let now = self.bundle.augmenter.as_ref().map(|a| a.store.clone());
            self.verify(augmenter, now.as_ref(), "augmenter during descent")?;
        }
        Ok((ascent, descent))
    }

    /// Runs every epoch over the training split and keeps the parameters of the
    /// first epoch with the highest validation accuracy.
    pub fn fit(mut self, split: &DatasetSplit) -> Result<TrainOutcome, EngineError> {
        if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
            return Err(EngineError::Argument("every split must be nonempty".into()));
        }
        let inputs: Vec<GraphInput> = split.train.iter().map(Graph::to_input).collect();
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let mut metrics = Vec::new();
        let mut best: Option<(usize, f32, f32, ModelBundle)> = None;
        let is_advca = matches!(self.method, Method::Advca { .. });
        let has_ascent = self.method.has_learned_augmenter();

        for epoch in 1..=self.config.epochs {
            self.epoch = epoch;
            order.shuffle(&mut self.rng);
            let (mut loss, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
            let (mut adv, mut reg1, mut cau, mut reg2) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            let mut batches = 0usize;
            for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
                self.batch = b + 1;
                let batch: Vec<GraphInput> = chunk.iter().map(|&i| inputs[i].clone()).collect();
                let (ascent, descent) = self.train_batch(&batch)?;
                let w = descent.count as f64;
                loss += f64::from(descent.objective) * w;
                correct += descent.correct;
                seen += descent.count;
                adv += f64::from(ascent.main.unwrap_or(0.0)) * w;
                reg1 += f64::from(ascent.reg.unwrap_or(0.0)) * w;
                cau += f64::from(descent.main.unwrap_or(0.0)) * w;
                reg2 += f64::from(descent.reg.unwrap_or(0.0)) * w;
                batches += 1;
            }
            debug!("epoch {epoch}: {batches} batches");
            let per = |s: f64| (s / seen as f64) as f32;
            metrics.push(EpochMetrics {
                epoch,
                split: "train",
                loss: per(loss),
                accuracy: mean(correct as f32, seen),
                l_adv: has_ascent.then(|| per(adv)),
                l_cau: is_advca.then(|| per(cau)),
                l_reg1: has_ascent.then(|| per(reg1)),
                l_reg2: is_advca.then(|| per(reg2)),
                mask_causal: None,
                mask_env: None,
            });
            let val = evaluate(&self.bundle, &split.val)?;
            let test = evaluate(&self.bundle, &split.test)?;
            for (name, stats) in [("val", val), ("test", test)] {
                metrics.push(EpochMetrics {
                    epoch,
                    split: name,
                    loss: stats.loss,
                    accuracy: stats.accuracy,
                    l_adv: None,
                    l_cau: None,
                    l_reg1: None,
                    l_reg2: None,
                    mask_causal: stats.mask_causal,
                    mask_env: stats.mask_env,
                });
            }
            info!(
                "{} epoch {epoch}: train loss {:.4} acc {:.3}, val acc {:.3}, test acc {:.3}",
                self.method,
                per(loss),
                mean(correct as f32, seen),
                val.accuracy,
                test.accuracy
            );
            if best.as_ref().map_or(true, |b| val.accuracy > b.1) {
                best = Some((epoch, val.accuracy, test.accuracy, self.bundle.clone()));
            }
        }
        let (best_epoch, best_val_acc, test_acc, bundle) = best.expect("at least one epoch");
        Ok(TrainOutcome {
            bundle,
            metrics,
            best_epoch,
            best_val_acc,
            test_acc,
            partition_checks: self.partition_checks,
        })
    }
}
