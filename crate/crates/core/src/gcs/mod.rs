//! Graph covariate shift between two graph sets: a domain classifier supplies
//! graph features, KDE models their densities and importance-sampled Monte Carlo
//! integrates `½∫_S |P_a − P_b|` over the non-overlap set `S`.

mod domain;
mod features;
mod kde;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{combine_masks, dropedge_input, EngineError, ModelBundle};
use crate::gnn::GraphBatch;
use crate::graph::GraphInput;
use crate::tensor::TensorError;

pub use domain::{train_domain_classifier, DomainClassifier};
pub use features::{has_spread, standardize_and_project};
pub use kde::Kde;

#[derive(Debug, Error)]
pub enum GcsError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Estimator settings. `epsilon` is relative: the threshold is `epsilon` times the
/// largest density either part's KDE assigns to its own support points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcsConfig {
    pub mc_samples: usize,
    pub epsilon: f64,
    pub feature_dim: usize,
    pub classifier_layers: usize,
    pub classifier_hidden: usize,
    pub classifier_epochs: usize,
    pub classifier_batch_size: usize,
    pub classifier_lr: f32,
}

impl Default for GcsConfig {
    fn default() -> Self {
        GcsConfig {
            mc_samples: 10_000,
            epsilon: 1e-4,
            feature_dim: 4,
            classifier_layers: 2,
            classifier_hidden: 32,
            classifier_epochs: 20,
            classifier_batch_size: 32,
            classifier_lr: 5e-3,
        }
    }
}

impl GcsConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.mc_samples == 0 {
            return Err("gcs.mc_samples must be at least 1".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err("gcs.epsilon must be positive".into());
        }
        for (name, v) in [
            ("feature_dim", self.feature_dim),
            ("classifier_layers", self.classifier_layers),
            ("classifier_hidden", self.classifier_hidden),
            ("classifier_epochs", self.classifier_epochs),
            ("classifier_batch_size", self.classifier_batch_size),
        ] {
            if v == 0 {
                return Err(format!("gcs.{name} must be at least 1"));
            }
        }
        if !(self.classifier_lr.is_finite() && self.classifier_lr > 0.0) {
            return Err("gcs.classifier_lr must be positive".into());
        }
        Ok(())
    }
}

/// Threshold below which a density counts as zero when deciding membership of `S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Absolute(f64),
    /// Multiple of the largest self-density over both parts' support points.
    Relative(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcsReport {
    pub gcs: f64,
    #[serde(rename = "M")]
    pub mc_samples: usize,
    pub epsilon: f64,
    pub feature_dim: usize,
    pub accepted_fraction: f64,
}

/// Monte Carlo estimate of `½∫_S |P_a − P_b|` with proposal `ω̂`, the KDE of the union.
pub fn estimate_gcs(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    samples: usize,
    threshold: Threshold,
    seed: u64,
) -> Result<GcsReport, GcsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(GcsError::Argument("each feature set needs at least 2 points".into()));
    }
    if samples == 0 {
        return Err(GcsError::Argument("M must be at least 1".into()));
    }
    let factor = match threshold {
        Threshold::Absolute(e) | Threshold::Relative(e) => e,
    };
    if !(factor.is_finite() && factor > 0.0) {
        return Err(GcsError::Argument(format!("threshold must be positive, got {factor}")));
    }
    let union: Vec<Vec<f64>> = a.iter().chain(b).cloned().collect();
    let omega = Kde::fit(union)?;
    let pa = Kde::fit(a.to_vec())?;
    let pb = Kde::fit(b.to_vec())?;
    let epsilon = match threshold {
        Threshold::Absolute(e) => e,
        Threshold::Relative(r) => {
            let peak = |k: &Kde| k.points().iter().map(|p| k.log_density(p)).fold(f64::NEG_INFINITY, f64::max);
            r * peak(&pa).max(peak(&pb)).exp()
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut total, mut accepted) = (0.0f64, 0usize);
    for _ in 0..samples {
        let z = omega.sample(&mut rng);
        let (la, lb) = (pa.log_density(&z), pb.log_density(&z));
        if la.exp() < epsilon || lb.exp() < epsilon {
            let lw = omega.log_density(&z);
            total += ((la - lw).exp() - (lb - lw).exp()).abs();
            accepted += 1;
        }
    }
    Ok(GcsReport {
        gcs: (total / (2.0 * samples as f64)).clamp(0.0, 1.0),
        mc_samples: samples,
        epsilon,
        feature_dim: omega.dim(),
        accepted_fraction: accepted as f64 / samples as f64,
    })
}

/// The full pipeline: domain classifier, feature extraction, standardization and
/// projection, then [`estimate_gcs`].
pub fn gcs_between(
    a: &[GraphInput],
    b: &[GraphInput],
    config: &GcsConfig,
    seed: u64,
) -> Result<GcsReport, GcsError> {
    config.validate().map_err(GcsError::Argument)?;
    let clf = train_domain_classifier(a, b, config, seed)?;
    let (fa, fb) = (clf.features(a)?, clf.features(b)?);
    if !has_spread(&fa, &fb) {
        // Both sets map to one point, so no shift is visible in feature space.
        return Ok(GcsReport {
            gcs: 0.0,
            mc_samples: config.mc_samples,
            epsilon: 0.0,
            feature_dim: 0,
            accepted_fraction: 0.0,
        });
    }
    let (fa, fb) = standardize_and_project(&fa, &fb, config.feature_dim)?;
    estimate_gcs(&fa, &fb, config.mc_samples, Threshold::Relative(config.epsilon), seed)
}

/// How a training graph is turned into its augmented view.
#[derive(Debug, Clone, Copy)]
pub enum Augmentation<'a> {
    Identity,
    DropEdge(f32),
    /// `g̃`: augmenter masks combined with the causal generator's masks.
    Learned(&'a ModelBundle),
}

pub fn augment_all(graphs: &[GraphInput], aug: Augmentation<'_>, seed: u64) -> Result<Vec<GraphInput>, GcsError> {
    match aug {
        Augmentation::Identity => Ok(graphs.to_vec()),
        Augmentation::DropEdge(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(GcsError::Argument(format!("drop rate {p} outside [0, 1]")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(graphs.iter().map(|g| dropedge_input(g, p, &mut rng)).collect())
        }
        Augmentation::Learned(bundle) => {
            let augmenter = bundle
                .augmenter
                .as_ref()
                .ok_or_else(|| GcsError::Argument("bundle has no adversarial augmenter".into()))?;
            let mut out = Vec::with_capacity(graphs.len());
            for chunk in graphs.chunks(256) {
                let batch = GraphBatch::new(chunk)?;
                let adv = augmenter.masks_batch(&batch)?.unpack(&batch.layout);
                let cau = match &bundle.generator {
                    Some(net) => Some(net.masks_batch(&batch)?.unpack(&batch.layout)),
                    None => None,
                };
                for (i, g) in chunk.iter().enumerate() {
                    let mixed = match &cau {
                        Some(cau) => combine_masks(&adv[i], &cau[i])?,
                        None => adv[i].clone(),
                    };
                    out.push(mixed.apply(g)?);
                }
            }
            Ok(out)
        }
    }
}

/// Aug-Train = GCS(P_aug, P_train) and Aug-Test = GCS(P_aug, P_test).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugShift {
    pub aug_train: GcsReport,
    pub aug_test: GcsReport,
}

pub fn measure_aug_shift(
    aug: Augmentation<'_>,
    train: &[GraphInput],
    test: &[GraphInput],
    config: &GcsConfig,
    seed: u64,
) -> Result<AugShift, GcsError> {
    let augmented = augment_all(train, aug, seed)?;
    Ok(AugShift {
        aug_train: gcs_between(&augmented, train, config, seed)?,
        aug_test: gcs_between(&augmented, test, config, seed.wrapping_add(1))?,
    })
}
