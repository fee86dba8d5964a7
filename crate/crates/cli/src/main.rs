use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advca_core::experiment::{cmd_ablate, cmd_gcs, cmd_generate, cmd_train, cmd_visualize};
use advca_core::io::write_atomic;
use advca_core::{ExperimentConfig, ExperimentError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "advca-lab", version, about = "Adversarial causal augmentation experiments on synthetic motif graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config of `section.key = value` lines.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of the command (dataset seed for generate, base run seed otherwise).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test JSONL files and a manifest.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train `experiment.method` for `experiment.num_seeds` seeds.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Estimate the covariate shift between two JSONL graph sets.
    Gcs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Write DOT renderings of causal masks for selected graphs.
    Visualize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSONL file holding the graphs.
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated graph positions in the dataset file.
        #[arg(long, value_delimiter = ',', required = true)]
        indices: Vec<usize>,
    },
    /// Compare AdvCA, its two ablations, RDCA and ERM.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.dataset.seed = seed;
        config.train.seed = seed;
    }
    Ok(config)
}

fn write_json(path: &Path, json: &str) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(path.parent().unwrap_or(Path::new("."))).map_err(|source| ExperimentError::Io {
        path: path.to_owned(),
        source,
    })?;
    write_atomic(path, json.as_bytes()).map_err(|source| ExperimentError::Io {
        path: path.to_owned(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Generate { common } => {
            let config = load(&common)?;
            let manifest = cmd_generate(&config, &common.out)?;
            println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes"));
        }
        Command::Train { common, data } => {
            let config = load(&common)?;
            let summary = cmd_train(&config, &data, &common.out)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Command::Gcs { common, a, b } => {
            let config = load(&common)?;
            let report = cmd_gcs(&config, &a, &b, config.train.seed)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_json(&common.out.join("gcs_report.json"), &json)?;
            println!("{json}");
        }
        Command::Visualize {
            common,
            checkpoint,
            dataset,
            indices,
        } => {
            let config = load(&common)?;
            for path in cmd_visualize(&config, &checkpoint, &dataset, &indices, &common.out)? {
                println!("{}", path.display());
            }
        }
        Command::Ablate { common, data } => {
            let config = load(&common)?;
            for row in cmd_ablate(&config, &data, &common.out)? {
                println!("{},{},{}", row.variant, row.mean_acc, row.std_acc);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("advca-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
