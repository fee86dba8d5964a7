//! Reproducible experiment commands: dataset generation, multi-seed training,
//! shift measurement, mask visualization and the component ablation.

mod config;
mod dot;

use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{write_metrics_csv, EngineError, Method, ModelBundle, TrainOutcome, Trainer};
use crate::gcs::{gcs_between, GcsError, GcsReport};
use crate::gnn::{save_checkpoint, load_checkpoint, CheckpointError};
use crate::graph::{
    generate_motif_dataset, load_jsonl, save_jsonl, split_covariate, DatasetSplit, Graph, GraphError,
    GraphInput, NUM_CLASSES,
};
use crate::io::write_atomic;

pub use config::{DatasetConfig, ExperimentConfig, RunConfig};
pub use dot::{gray_level, penwidth, render_dot};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl ExperimentError {
    /// Process exit code: 2 config, 3 data or I/O, 4 runtime or numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Data(_) | ExperimentError::Io { .. } => 3,
            ExperimentError::Runtime(_) => 4,
        }
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| ExperimentError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

impl From<GraphError> for ExperimentError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Argument(m) => ExperimentError::Config(m),
            other => ExperimentError::Data(other.to_string()),
        }
    }
}

impl From<EngineError> for ExperimentError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Checkpoint(c) => c.into(),
            other => ExperimentError::Runtime(other.to_string()),
        }
    }
}

impl From<CheckpointError> for ExperimentError {
    fn from(e: CheckpointError) -> Self {
        ExperimentError::Data(e.to_string())
    }
}

impl From<GcsError> for ExperimentError {
    fn from(e: GcsError) -> Self {
        ExperimentError::Runtime(e.to_string())
    }
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_HEADER: &str = "variant,mean_acc,std_acc";

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    write_atomic(path, bytes).map_err(ExperimentError::io(path))
}

fn ensure_dir(dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(ExperimentError::io(dir))
}

fn load_graphs(path: &Path) -> Result<Vec<Graph>, ExperimentError> {
    load_jsonl(path).map_err(|e| match e {
        GraphError::Io(source) => ExperimentError::Io {
            path: path.to_owned(),
            source,
        },
        other => ExperimentError::Data(format!("{}: {other}", path.display())),
    })
}

/// Per-split statistics laid out like a dataset-summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub file: String,
    pub graphs: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
    pub envs: Vec<String>,
}

impl SplitStats {
    pub fn of(file: &str, graphs: &[Graph]) -> Self {
        let n = graphs.len().max(1) as f64;
        SplitStats {
            file: file.to_owned(),
            graphs: graphs.len(),
            avg_nodes: graphs.iter().map(|g| g.num_nodes as f64).sum::<f64>() / n,
            avg_edges: graphs.iter().map(|g| g.num_edges() as f64).sum::<f64>() / n,
            envs: DatasetSplit::envs(graphs).into_iter().map(str::to_owned).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub shift_kind: String,
    pub seed: u64,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub train: SplitStats,
    pub val: SplitStats,
    pub test: SplitStats,
    /// The only field that differs between identical runs.
    pub created_at: String,
}

/// Generates the Motif dataset of `config.dataset` and writes `train.jsonl`,
/// `val.jsonl`, `test.jsonl` and `manifest.json` into `out_dir`.
pub fn cmd_generate(config: &ExperimentConfig, out_dir: &Path) -> Result<Manifest, ExperimentError> {
    let d = &config.dataset;
    let graphs = generate_motif_dataset(&d.motif())?;
    let split = split_covariate(graphs, d.shift_kind)?;
    ensure_dir(out_dir)?;
    let parts = [&split.train, &split.val, &split.test];
    let mut stats = Vec::with_capacity(3);
    for (name, part) in SPLIT_NAMES.iter().zip(parts) {
        let file = format!("{name}.jsonl");
        save_jsonl(part, &out_dir.join(&file)).map_err(|e| match e {
            GraphError::Io(source) => ExperimentError::Io {
                path: out_dir.join(&file),
                source,
            },
            other => other.into(),
        })?;
        stats.push(SplitStats::of(&file, part));
    }
    let [train, val, test]: [SplitStats; 3] = stats.try_into().expect("three splits");
    let manifest = Manifest {
        shift_kind: d.shift_kind.as_str().to_owned(),
        seed: d.seed,
        feature_dim: d.feature_dim,
        num_classes: NUM_CLASSES,
        train,
        val,
        test,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out_dir.join(MANIFEST_FILE), json.as_bytes())?;
    info!("wrote {} / {} / {} graphs to {}", split.train.len(), split.val.len(), split.test.len(), out_dir.display());
    Ok(manifest)
}

/// Loads the three splits written by [`cmd_generate`].
pub fn load_split(config: &ExperimentConfig, data_dir: &Path) -> Result<DatasetSplit, ExperimentError> {
    let [train, val, test] = SPLIT_NAMES.map(|name| load_graphs(&data_dir.join(format!("{name}.jsonl"))));
    let split = DatasetSplit {
        train: train?,
        val: val?,
        test: test?,
        shift_kind: config.dataset.shift_kind,
    };
    split.check()?;
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Test accuracy at the best-validation epoch.
    pub test_acc: Option<f32>,
    pub best_val_acc: Option<f32>,
    pub best_epoch: Option<usize>,
    pub diverged: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub method: String,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub per_seed: Vec<SeedResult>,
}

/// Mean and sample standard deviation; the deviation of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One finished seed: its row in the summary and, unless it diverged, the outcome.
pub struct SeedRun {
    pub result: SeedResult,
    pub outcome: Option<TrainOutcome>,
}

/// Trains `method` once per seed `train.seed + k`, `k < num_seeds`. A diverged
/// seed is recorded and the remaining seeds still run.
pub fn run_seeds(config: &ExperimentConfig, method: Method, split: &DatasetSplit) -> Result<Vec<SeedRun>, ExperimentError> {
    let feature_dim = split.train.first().map_or(0, Graph::feature_dim);
    let mut runs = Vec::with_capacity(config.experiment.num_seeds);
    for k in 0..config.experiment.num_seeds as u64 {
        let seed = config.train.seed.wrapping_add(k);
        let train = crate::engine::TrainConfig {
            seed,
            ..config.train.clone()
        };
        let bundle = ModelBundle::new(&config.model, method, feature_dim, NUM_CLASSES, seed);
        let run = match Trainer::new(bundle, method, train)?.fit(split) {
            Ok(outcome) => {
                info!("{method} seed {seed}: test acc {:.4} at epoch {}", outcome.test_acc, outcome.best_epoch);
                SeedRun {
                    result: SeedResult {
                        seed,
                        test_acc: Some(outcome.test_acc),
                        best_val_acc: Some(outcome.best_val_acc),
                        best_epoch: Some(outcome.best_epoch),
                        diverged: None,
                    },
                    outcome: Some(outcome),
                }
            }
            Err(e @ EngineError::Diverged { .. }) => {
                warn!("{method} seed {seed}: {e}");
                SeedRun {
                    result: SeedResult {
                        seed,
                        test_acc: None,
                        best_val_acc: None,
                        best_epoch: None,
                        diverged: Some(e.to_string()),
                    },
                    outcome: None,
                }
            }
            Err(e) => return Err(e.into()),
        };
        runs.push(run);
    }
    Ok(runs)
}

/// Summary over the seeds that finished; all-diverged runs give NaN statistics.
pub fn summarize(method: Method, runs: &[SeedRun]) -> TrainSummary {
    let accs: Vec<f64> = runs.iter().filter_map(|r| r.result.test_acc.map(f64::from)).collect();
    let (mean, std) = mean_std(&accs);
    TrainSummary {
        method: method.name().to_owned(),
        mean_test_acc: mean,
        std_test_acc: std,
        per_seed: runs.iter().map(|r| r.result.clone()).collect(),
    }
}

/// Multi-seed training of `experiment.method` on the data in `data_dir`. Writes
/// `seed_<s>.ckpt`, `metrics_seed_<s>.csv` and `summary.json` into `out_dir`.
pub fn cmd_train(config: &ExperimentConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainSummary, ExperimentError> {
    let method = config.method()?;
    let split = load_split(config, data_dir)?;
    ensure_dir(out_dir)?;
    let runs = run_seeds(config, method, &split)?;
    for run in &runs {
        if let Some(outcome) = &run.outcome {
            let seed = run.result.seed;
            let csv = write_metrics_csv(&outcome.metrics);
            write_file(&out_dir.join(format!("metrics_seed_{seed}.csv")), csv.as_bytes())?;
            save_checkpoint(&outcome.bundle.named_tensors(), &out_dir.join(format!("seed_{seed}.ckpt")))?;
        }
    }
    let summary = summarize(method, &runs);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&out_dir.join(SUMMARY_FILE), json.as_bytes())?;
    Ok(summary)
}

/// Covariate shift between the graph sets stored in two JSONL files.
pub fn cmd_gcs(config: &ExperimentConfig, a: &Path, b: &Path, seed: u64) -> Result<GcsReport, ExperimentError> {
    let to_inputs = |p: &Path| -> Result<Vec<GraphInput>, ExperimentError> {
        let graphs = load_graphs(p)?;
        if graphs.len() < 2 {
            return Err(ExperimentError::Data(format!("{} holds fewer than 2 graphs", p.display())));
        }
        Ok(graphs.iter().map(Graph::to_input).collect())
    };
    let (a, b) = (to_inputs(a)?, to_inputs(b)?);
    Ok(gcs_between(&a, &b, &config.gcs, seed)?)
}

/// Loads an AdvCA checkpoint into a bundle shaped by `config.model`.
pub fn load_bundle(config: &ExperimentConfig, checkpoint: &Path, feature_dim: usize) -> Result<ModelBundle, ExperimentError> {
    let tensors = load_checkpoint(checkpoint).map_err(|e| match e {
        CheckpointError::Io(source) => ExperimentError::Io {
            path: checkpoint.to_owned(),
            source,
        },
        other => other.into(),
    })?;
    let method = if tensors.iter().any(|(n, _)| n.starts_with("augmenter.")) {
        Method::ADVCA
    } else {
        Method::WITHOUT_ADV
    };
    let mut bundle = ModelBundle::new(&config.model, method, feature_dim, NUM_CLASSES, 0);
    bundle.load_named(tensors)?;
    Ok(bundle)
}

/// One DOT file per selected graph, colored by the causal generator's masks.
/// Returns the written paths.
pub fn cmd_visualize(
    config: &ExperimentConfig,
    checkpoint: &Path,
    dataset: &Path,
    indices: &[usize],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let graphs = load_graphs(dataset)?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= graphs.len()) {
        return Err(ExperimentError::Config(format!(
            "index {bad} out of range for {} graphs",
            graphs.len()
        )));
    }
    let feature_dim = graphs.first().map_or(0, Graph::feature_dim);
    let bundle = load_bundle(config, checkpoint, feature_dim)?;
    let generator = bundle
        .generator
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("checkpoint has no causal generator".into()))?;
    ensure_dir(out_dir)?;
    let mut written = Vec::with_capacity(indices.len());
    for &i in indices {
        let masks = generator.masks(&graphs[i].to_input()).map_err(|e| ExperimentError::Runtime(e.to_string()))?;
        let path = out_dir.join(format!("graph_{i}.dot"));
        write_file(&path, render_dot(&graphs[i], &masks).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

pub const ABLATION_VARIANTS: [(&str, Method); 5] = [
    ("advca", Method::ADVCA),
    ("wo_adv", Method::WITHOUT_ADV),
    ("wo_cau", Method::WITHOUT_CAU),
    ("rdca", Method::RDCA),
    ("erm", Method::Erm),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: &'static str,
    pub mean_acc: f64,
    pub std_acc: f64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.variant, r.mean_acc, r.std_acc));
    }
    out
}

/// Trains every ablation variant on the same seeds and writes `ablation.csv`.
pub fn cmd_ablate(config: &ExperimentConfig, data_dir: &Path, out_dir: &Path) -> Result<Vec<AblationRow>, ExperimentError> {
    let split = load_split(config, data_dir)?;
    ensure_dir(out_dir)?;
    let mut rows = Vec::with_capacity(ABLATION_VARIANTS.len());
    for (variant, method) in ABLATION_VARIANTS {
        let summary = summarize(method, &run_seeds(config, method, &split)?);
        rows.push(AblationRow {
            variant,
            mean_acc: summary.mean_test_acc,
            std_acc: summary.std_test_acc,
        });
    }
    write_file(&out_dir.join(ABLATION_FILE), ablation_csv(&rows).as_bytes())?;
    Ok(rows)
}
