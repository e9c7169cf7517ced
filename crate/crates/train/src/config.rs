use emvlab::env::EnvConfig;
use emvlab::rlcore::PressureKind;
use serde::{Deserialize, Serialize};

use crate::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    None,
    PresslightPressure,
    NoSecondary,
    NoPrimary,
    NoFingerprint,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::PresslightPressure,
        Ablation::NoSecondary,
        Ablation::NoPrimary,
        Ablation::NoFingerprint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "full",
            Ablation::PresslightPressure => "presslight-pressure",
            Ablation::NoSecondary => "no-secondary",
            Ablation::NoPrimary => "no-primary",
            Ablation::NoFingerprint => "no-fingerprint",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Reward settings for this variant.
    pub fn apply(self, env: &mut EnvConfig) {
        match self {
            Ablation::PresslightPressure => env.reward.pressure = PressureKind::PressLight,
            Ablation::NoSecondary => env.reward.secondary = false,
            Ablation::NoPrimary => env.reward.primary = false,
            Ablation::None | Ablation::NoFingerprint => {}
        }
    }

    pub fn fingerprints(self) -> bool {
        self != Ablation::NoFingerprint
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub lr: f64,
    /// Entropy weight λ.
    pub entropy: f64,
    /// MDP steps per update.
    pub batch_steps: usize,
    pub episodes: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.99,
            lr: 1e-3,
            entropy: 0.01,
            batch_steps: 40,
            episodes: 1000,
            grad_clip: 40.0,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut bad = Vec::new();
        if !(0.0..=1.0).contains(&self.gamma) {
            bad.push(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad.push(format!("lr {} must be positive", self.lr));
        }
        if !(self.entropy >= 0.0) {
            bad.push(format!("entropy weight {} must be >= 0", self.entropy));
        }
        if self.batch_steps == 0 {
            bad.push("batch_steps must be >= 1".into());
        }
        if !(self.grad_clip > 0.0) {
            bad.push(format!("grad_clip {} must be positive", self.grad_clip));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(bad.join("; ")))
        }
    }

    /// Environment seed of training episode `episode`.
    pub fn episode_seed(&self, episode: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(episode as u64)
    }
}
