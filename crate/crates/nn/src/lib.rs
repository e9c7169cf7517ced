//! Recurrent actor-critic networks over a generic float type.

mod adam;
mod layers;
mod net;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

pub use adam::{clip_global_norm, Adam};
pub use layers::{entropy, log_softmax, orthogonal, softmax, Dense, Lstm, LstmCache};
pub use net::{Context, Net, NetConfig, StepCache};

pub type Net64 = Net<f64>;
pub type Adam64 = Adam<f64>;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{layer}: expected input of length {expected}, got {got}")]
    Shape {
        layer: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("checkpoint version {0} is not supported")]
    Version(u32),
    #[error("checkpoint: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    version: u32,
    body: T,
}

/// Serializes any checkpoint body with a version tag.
pub fn to_checkpoint<T: Serialize>(body: &T) -> Result<String, NnError> {
    Ok(serde_json::to_string(&Envelope {
        version: CHECKPOINT_VERSION,
        body,
    })?)
}

pub fn from_checkpoint<T: DeserializeOwned>(s: &str) -> Result<T, NnError> {
    let env: Envelope<T> = serde_json::from_str(s)?;
    if env.version != CHECKPOINT_VERSION {
        return Err(NnError::Version(env.version));
    }
    Ok(env.body)
}
