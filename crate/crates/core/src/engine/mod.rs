//! Adversarial-causal training, its ablations, and the ERM / DropEdge baselines.

mod augment;
mod metrics;
mod objectives;
mod trainer;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::gnn::{Backbone, CheckpointError, MaskNet, ModelConfig};
use crate::params::{Bound, OptimizerKind, ParamStore};
use crate::tensor::{Tensor, TensorError};

pub use augment::{dropedge_augment, dropedge_input, rdca_random_masks};
pub use metrics::{write_metrics_csv, EpochMetrics, METRICS_HEADER};
pub use objectives::{
    adversarial_loss, causal_loss, combine_mask_vars, combine_masks, record_adversarial,
    record_causal, regularizer, regularizer_var, transport_cost, AdvTerms, CausalTerms, MaskSource,
};
pub use trainer::{erm_step, evaluate, predict, EvalStats, StepStats, TrainOutcome, Trainer};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite {what}")]
    Diverged {
        epoch: usize,
        batch: usize,
        what: &'static str,
    },
    #[error("gradient partition violated: {0}")]
    Partition(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Hyperparameters of every trainer in this module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Augmenter (ascent) learning rate.
    pub alpha: f32,
    /// Backbone and generator (descent) learning rate.
    pub beta: f32,
    /// Transport-cost coefficient.
    pub gamma: f32,
    pub lambda_c: f32,
    pub lambda_a: f32,
    /// Threshold of the counting term of the regularizer.
    pub tau: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub dropedge_p: f32,
    /// Snapshot parameters around every step and fail on cross-partition writes.
    pub verify_partition: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1e-3,
            beta: 5e-3,
            gamma: 0.2,
            lambda_c: 0.5,
            lambda_a: 1.0,
            tau: 0.5,
            epochs: 100,
            batch_size: 64,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            dropedge_p: 0.2,
            verify_partition: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: &str| Err(EngineError::Argument(msg.to_owned()));
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.gamma >= 0.0) {
            return bad("alpha, beta and gamma must be nonnegative");
        }
        if !(self.lambda_c > 0.0 && self.lambda_c < 1.0) {
            return bad("lambda_c must lie in (0, 1)");
        }
        if !(self.lambda_a > 0.0 && self.lambda_a <= 1.0) {
            return bad("lambda_a must lie in (0, 1]");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropedge_p) {
            return bad("dropedge_p must lie in [0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1");
        }
        Ok(())
    }
}

/// Source of the perturbation masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmenterMode {
    /// Learned by gradient ascent.
    Adversarial,
    /// Masks ≡ 1 (no perturbation).
    Identity,
    /// Fresh random masks with 20% of the support zeroed.
    Random,
}

/// Source of the causal masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorMode {
    Learned,
    /// Masks ≡ 1.
    Identity,
    /// No causal branch: the objective is `ℓ(f(g)) + ℓ(f(T1 g))`.
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Erm,
    DropEdge,
    Advca {
        augmenter: AugmenterMode,
        generator: GeneratorMode,
    },
}

impl Method {
    pub const ADVCA: Method = Method::Advca {
        augmenter: AugmenterMode::Adversarial,
        generator: GeneratorMode::Learned,
    };
    pub const WITHOUT_ADV: Method = Method::Advca {
        augmenter: AugmenterMode::Identity,
        generator: GeneratorMode::Learned,
    };
    pub const WITHOUT_CAU: Method = Method::Advca {
        augmenter: AugmenterMode::Adversarial,
        generator: GeneratorMode::Absent,
    };
    pub const RDCA: Method = Method::Advca {
        augmenter: AugmenterMode::Random,
        generator: GeneratorMode::Learned,
    };

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::DropEdge => "dropedge",
            m if m == Method::ADVCA => "advca",
            m if m == Method::WITHOUT_ADV => "wo_adv",
            m if m == Method::WITHOUT_CAU => "wo_cau",
            m if m == Method::RDCA => "rdca",
            Method::Advca { .. } => "advca_custom",
        }
    }

    pub fn augmenter(self) -> Option<AugmenterMode> {
        match self {
            Method::Advca { augmenter, .. } => Some(augmenter),
            _ => None,
        }
    }

    pub fn generator(self) -> Option<GeneratorMode> {
        match self {
            Method::Advca { generator, .. } => Some(generator),
            _ => None,
        }
    }

    pub fn has_learned_augmenter(self) -> bool {
        self.augmenter() == Some(AugmenterMode::Adversarial)
    }

    pub fn has_learned_generator(self) -> bool {
        self.generator() == Some(GeneratorMode::Learned)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "erm" => Ok(Method::Erm),
            "dropedge" => Ok(Method::DropEdge),
            "advca" => Ok(Method::ADVCA),
            "wo_adv" => Ok(Method::WITHOUT_ADV),
            "wo_cau" => Ok(Method::WITHOUT_CAU),
            "rdca" => Ok(Method::RDCA),
            other => Err(EngineError::Argument(format!("unknown method {other:?}"))),
        }
    }
}

/// Backbone `θ`, adversarial augmenter `θ1` and causal generator `θ2`, each
/// with its own parameter store.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub backbone: Backbone,
    pub augmenter: Option<MaskNet>,
    pub generator: Option<MaskNet>,
}

/// A bundle recorded on one tape.
#[derive(Debug, Clone)]
pub struct BoundBundle {
    pub backbone: Bound,
    pub augmenter: Option<Bound>,
    pub generator: Option<Bound>,
}

/// Which stores record gradients when bound.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Trainable {
    pub backbone: bool,
    pub augmenter: bool,
    pub generator: bool,
}

const BACKBONE_PREFIX: &str = "backbone.";
const AUGMENTER_PREFIX: &str = "augmenter.";
const GENERATOR_PREFIX: &str = "generator.";

impl ModelBundle {
    /// Builds the networks `method` needs, initialized from `seed`.
    pub fn new(
        config: &ModelConfig,
        method: Method,
        feature_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(config, feature_dim, num_classes, &mut rng);
        let augmenter = method
            .has_learned_augmenter()
            .then(|| MaskNet::new(config, feature_dim, &mut rng));
        let generator = method
            .has_learned_generator()
            .then(|| MaskNet::new(config, feature_dim, &mut rng));
        ModelBundle {
            backbone,
            augmenter,
            generator,
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: Trainable) -> BoundBundle {
        BoundBundle {
            backbone: self.backbone.store.bind(tape, trainable.backbone),
            augmenter: self
                .augmenter
                .as_ref()
                .map(|a| a.store.bind(tape, trainable.augmenter)),
            generator: self
                .generator
                .as_ref()
                .map(|g| g.store.bind(tape, trainable.generator)),
        }
    }

    fn stores(&self) -> [(&'static str, Option<&ParamStore>); 3] {
        [
            (BACKBONE_PREFIX, Some(&self.backbone.store)),
            (AUGMENTER_PREFIX, self.augmenter.as_ref().map(|a| &a.store)),
            (GENERATOR_PREFIX, self.generator.as_ref().map(|g| &g.store)),
        ]
    }

    /// Every parameter under a `backbone.` / `augmenter.` / `generator.` name.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (prefix, store) in self.stores() {
            if let Some(store) = store {
                out.extend(store.iter().map(|(n, t)| (format!("{prefix}{n}"), t.clone())));
            }
        }
        out
    }

    /// Overwrites parameters from named tensors. Every parameter must be present
    /// with a matching shape and no foreign names may appear.
    pub fn load_named(&mut self, tensors: Vec<(String, Tensor)>) -> Result<(), EngineError> {
        let expected = self.named_tensors().len();
        if tensors.len() != expected {
            return Err(CheckpointError::Format(format!(
                "checkpoint holds {} tensors, model has {expected}",
                tensors.len()
            ))
            .into());
        }
        for (name, value) in tensors {
            let (store, local) = if let Some(rest) = name.strip_prefix(BACKBONE_PREFIX) {
                (Some(&mut self.backbone.store), rest)
            } else if let Some(rest) = name.strip_prefix(AUGMENTER_PREFIX) {
                (self.augmenter.as_mut().map(|a| &mut a.store), rest)
            } else if let Some(rest) = name.strip_prefix(GENERATOR_PREFIX) {
                (self.generator.as_mut().map(|g| &mut g.store), rest)
            } else {
                (None, name.as_str())
            };
            let store =
                store.ok_or_else(|| CheckpointError::Format(format!("unexpected tensor {name:?}")))?;
            let id = store
                .find(local)
                .ok_or_else(|| CheckpointError::Format(format!("unknown tensor {name:?}")))?;
            if store.get(id).shape() != value.shape() {
                return Err(CheckpointError::Format(format!(
                    "tensor {name:?} has shape {:?}, model expects {:?}",
                    value.shape(),
                    store.get(id).shape()
                ))
                .into());
            }
            *store.get_mut(id) = value;
        }
        Ok(())
    }
}
