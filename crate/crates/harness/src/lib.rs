//! Experiment specs, orchestration and reporting.

pub mod experiment;
pub mod report;
pub mod spec;

pub use experiment::{ablate, run, ResultRow, RunOutput};
pub use report::report;
pub use spec::{Arm, DemandSpec, EmvSpec, ExperimentSpec, MapSpec};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("config: {0}")]
    Parse(String),
    #[error("no results in {0}")]
    Empty(String),
    #[error(transparent)]
    Network(#[from] emvlab::NetworkError),
    #[error(transparent)]
    Env(#[from] emvlab::EnvError),
    #[error(transparent)]
    Train(#[from] emvlab_train::TrainError),
    #[error(transparent)]
    Nn(#[from] emvlab_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
