//! Progressive policy networks for pixel paddle games: a small f64 tensor
//! tape, columnar actor-critic networks with frozen priors and lateral
//! adapters, the MiniCatch environment family, a synchronous advantage
//! actor-critic trainer, and the transfer-analysis toolkit built on top.

pub mod analysis;
pub mod envs;
pub mod harness;
pub mod net;
pub mod seeds;
pub mod tensor;
pub mod trainer;

pub use analysis::{AnalysisError, SensitivityReport};
pub use harness::{Architecture, ExperimentConfig, HarnessError, TransferMatrix};
pub use envs::{EnvError, EnvOptions, Environment, MiniCatch, StepOutcome, Variant, VariantKind};
pub use net::{
    LayerSpec, NetError, NetSpec, ParamId, ParamKind, PolicyOutput, ProgressiveNetwork, Site,
};
pub use tensor::{Gradients, Graph, NodeId, Tensor, TensorError};
