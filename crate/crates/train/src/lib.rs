//! Multi-agent advantage actor-critic training over the signal-control environment.

mod agents;
mod config;
mod loss;
mod rollout;
mod trainer;

pub use agents::{normalize_locals, Agent, Checkpoint, LearnedController};
pub use config::{Ablation, TrainerConfig};
pub use loss::{compute_returns, policy_loss, policy_loss_grad, value_loss, value_loss_grad};
pub use rollout::{Batch, EpisodeLog, Runner, StepRecord};
pub use trainer::{evaluate, train, EvalRow, TrainOutput};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] emvlab::EnvError),
    #[error(transparent)]
    Nn(#[from] emvlab_nn::NnError),
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error("non-finite {what} for agent {agent} in episode {episode}")]
    NonFinite {
        what: &'static str,
        agent: usize,
        episode: usize,
        /// Parameters as they were before the failing update.
        checkpoint: Box<Checkpoint>,
    },
}
