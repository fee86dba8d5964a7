pub mod autodiff;
pub mod engine;
pub mod experiment;
pub mod gcs;
pub mod gnn;
pub mod graph;
pub mod io;
pub mod layout;
pub mod params;
pub mod tensor;

pub use autodiff::{Tape, Var};
pub use engine::{Method, ModelBundle, TrainConfig};
pub use experiment::{ExperimentConfig, ExperimentError};
pub use gcs::{GcsConfig, GcsReport};
pub use gnn::{MaskPair, ModelConfig};
pub use graph::{Graph, GraphInput};
pub use layout::Layout;
pub use params::{OptimizerKind, ParamStore};
pub use tensor::{Tensor, TensorError};
