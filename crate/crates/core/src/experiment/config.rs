use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::engine::{Method, TrainConfig};
use crate::gcs::GcsConfig;
use crate::gnn::ModelConfig;
use crate::graph::{MotifConfig, ShiftKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub shift_kind: ShiftKind,
    /// Graphs per class in each training environment.
    pub train_per_class: usize,
    /// Graphs per class in the validation and test environments.
    pub eval_per_class: usize,
    /// Inclusive base-graph size range; ignored by the size shift.
    pub base_min: usize,
    pub base_max: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            shift_kind: ShiftKind::Base,
            train_per_class: 100,
            eval_per_class: 50,
            base_min: 4,
            base_max: 10,
            feature_dim: 4,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn motif(&self) -> MotifConfig {
        match self.shift_kind {
            ShiftKind::Base => MotifConfig::base_shift(
                self.train_per_class,
                self.eval_per_class,
                (self.base_min, self.base_max),
                self.feature_dim,
                self.seed,
            ),
            ShiftKind::Size => {
                MotifConfig::size_shift(self.train_per_class, self.eval_per_class, self.feature_dim, self.seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: String,
    pub num_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: "advca".into(),
            num_seeds: 5,
        }
    }
}

/// Everything one experiment needs. Written as `section.key = value` lines,
/// which is a subset of TOML; every section must appear and unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gcs: GcsConfig,
    pub experiment: RunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            gcs: GcsConfig::default(),
            experiment: RunConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sections = toml::Value::try_from(self).expect("config serializes");
        for (section, table) in sections.as_table().expect("top-level table") {
            for (key, value) in table.as_table().expect("section table") {
                out.push_str(&format!("{section}.{key} = {value}\n"));
            }
        }
        out
    }

    pub fn method(&self) -> Result<Method, ExperimentError> {
        let method: Method = self
            .experiment
            .method
            .parse()
            .map_err(|e: crate::engine::EngineError| ExperimentError::Config(e.to_string()))?;
        Ok(method)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let config = |e: String| ExperimentError::Config(e);
        if self.experiment.num_seeds == 0 {
            return Err(config("experiment.num_seeds must be at least 1".into()));
        }
        match self.method()? {
            Method::Erm | Method::DropEdge => {}
            m if m == Method::ADVCA || m == Method::RDCA => {}
            other => {
                return Err(config(format!(
                    "experiment.method {other} is an ablation variant; use one of advca, erm, dropedge, rdca"
                )))
            }
        }
        if self.dataset.train_per_class == 0 || self.dataset.eval_per_class == 0 {
            return Err(config("dataset per-class counts must be at least 1".into()));
        }
        if self.dataset.feature_dim == 0 {
            return Err(config("dataset.feature_dim must be at least 1".into()));
        }
        if self.dataset.base_min > self.dataset.base_max {
            return Err(config("dataset.base_min exceeds dataset.base_max".into()));
        }
        self.model.validate().map_err(config)?;
        self.train.validate().map_err(|e| config(e.to_string()))?;
        self.gcs.validate().map_err(config)?;
        Ok(())
    }
}
