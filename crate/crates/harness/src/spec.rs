use std::path::PathBuf;
use std::sync::Arc;

use emvlab::env::{EmvTrip, EnvConfig, RouterKind};
use emvlab::network::{build_grid, build_manhattan};
use emvlab::sim::{DemandConfig, OdPattern};
use emvlab::{NodeId, TrafficMap};
use emvlab_train::TrainerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapSpec {
    Grid {
        rows: usize,
        cols: usize,
        #[serde(default = "default_lanes")]
        lanes: usize,
        #[serde(default = "default_length")]
        length: f64,
        #[serde(default = "yes")]
        bidirectional: bool,
    },
    Manhattan {
        streets: usize,
        avenues: usize,
    },
}

fn default_lanes() -> usize {
    2
}
fn default_length() -> f64 {
    200.0
}
fn yes() -> bool {
    true
}

impl MapSpec {
    pub fn build(&self) -> Result<TrafficMap, HarnessError> {
        Ok(match *self {
            MapSpec::Grid {
                rows,
                cols,
                lanes,
                length,
                bidirectional,
            } => build_grid(rows, cols, lanes, length, bidirectional)?,
            MapSpec::Manhattan { streets, avenues } => build_manhattan(streets, avenues)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DemandSpec {
    /// Configurations 1-4 of the synthetic grid.
    Synthetic {
        config: u8,
        /// Overrides the [400, 800] s peak window, e.g. for shortened episodes.
        #[serde(default)]
        peak_window: Option<(f64, f64)>,
    },
    /// Constant Poisson rate, veh/lane/hour.
    Constant {
        rate: f64,
        pattern: OdPattern,
    },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmvSpec {
    /// Defaults to the north-west corner.
    pub origin: Option<usize>,
    /// Defaults to the south-east corner.
    pub dest: Option<usize>,
    #[serde(default = "default_dispatch")]
    pub dispatch_time: f64,
}

fn default_dispatch() -> f64 {
    600.0
}

impl Default for EmvSpec {
    fn default() -> Self {
        EmvSpec {
            origin: None,
            dest: None,
            dispatch_time: default_dispatch(),
        }
    }
}

/// Rows of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "FT-no-EMV")]
    FtNoEmv,
    #[serde(rename = "W+Static+FT")]
    WStaticFt,
    #[serde(rename = "W+Static+MP")]
    WStaticMp,
    #[serde(rename = "W+Dynamic+FT")]
    WDynamicFt,
    #[serde(rename = "W+Dynamic+MP")]
    WDynamicMp,
    #[serde(rename = "EMVLight")]
    EmvLight,
}

impl Arm {
    /// Table order.
    pub const ALL: [Arm; 6] = [
        Arm::FtNoEmv,
        Arm::WStaticFt,
        Arm::WStaticMp,
        Arm::WDynamicFt,
        Arm::WDynamicMp,
        Arm::EmvLight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::FtNoEmv => "FT-no-EMV",
            Arm::WStaticFt => "W+Static+FT",
            Arm::WStaticMp => "W+Static+MP",
            Arm::WDynamicFt => "W+Dynamic+FT",
            Arm::WDynamicMp => "W+Dynamic+MP",
            Arm::EmvLight => "EMVLight",
        }
    }

    pub fn parse(s: &str) -> Option<Arm> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn has_emv(self) -> bool {
        self != Arm::FtNoEmv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub map: MapSpec,
    pub demand: DemandSpec,
    #[serde(default)]
    pub emv: EmvSpec,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_episode")]
    pub episode_length: f64,
    #[serde(default = "default_split")]
    pub fixed_time_split: f64,
    #[serde(default = "default_period")]
    pub router_period: f64,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_episode() -> f64 {
    1200.0
}
fn default_split() -> f64 {
    20.0
}
fn default_period() -> f64 {
    50.0
}
fn default_out() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentSpec {
    pub fn from_toml(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Parse(e.to_string()))
    }

    /// The spec with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn trip(&self, map: &TrafficMap) -> EmvTrip {
        let n = map.intersection_count();
        EmvTrip {
            origin: NodeId(self.emv.origin.unwrap_or(0)),
            dest: NodeId(self.emv.dest.unwrap_or(n.saturating_sub(1))),
        }
    }

    /// Collects every violation instead of stopping at the first.
    pub fn validate(&self) -> Result<Arc<TrafficMap>, HarnessError> {
        let mut bad = Vec::new();
        let map = match self.map.build() {
            Ok(m) => Some(m),
            Err(e) => {
                bad.push(format!("map: {e}"));
                None
            }
        };
        if self.seeds.is_empty() {
            bad.push("seeds: at least one seed is required".into());
        }
        if self.arms.is_empty() {
            bad.push("arms: at least one arm is required".into());
        }
        if !(self.episode_length > 0.0) {
            bad.push(format!("episode_length {} must be positive", self.episode_length));
        }
        if !(self.fixed_time_split >= 5.0) {
            bad.push(format!(
                "fixed_time_split {} is below the 5 s dwell",
                self.fixed_time_split
            ));
        }
        if !(self.router_period > 0.0) {
            bad.push(format!("router_period {} must be positive", self.router_period));
        }
        match self.demand {
            DemandSpec::Synthetic { config, .. } if !(1..=4).contains(&config) => {
                bad.push(format!("demand: configuration {config} does not exist (1-4)"))
            }
            DemandSpec::Constant { rate, .. } if !(rate >= 0.0 && rate.is_finite()) => {
                bad.push(format!("demand: rate {rate} must be finite and non-negative"))
            }
            _ => {}
        }
        if let Some(map) = &map {
            let trip = self.trip(map);
            for (what, n) in [("origin", trip.origin), ("dest", trip.dest)] {
                if !map.is_intersection(n) {
                    bad.push(format!("emv.{what}: node {} is not an intersection", n.0));
                }
            }
            if trip.origin == trip.dest {
                bad.push("emv: origin equals dest".into());
            }
        }
        if !(self.emv.dispatch_time >= 0.0 && self.emv.dispatch_time < self.episode_length) {
            bad.push(format!(
                "emv.dispatch_time {} must lie inside the episode",
                self.emv.dispatch_time
            ));
        }
        if let Some(d) = self.demand() {
            if let Err(e) = d.validate(self.episode_length) {
                bad.push(format!("demand: {e}"));
            }
        }
        if let Err(e) = self.trainer.validate() {
            bad.push(e.to_string());
        }
        match map {
            Some(m) if bad.is_empty() => Ok(Arc::new(m)),
            _ => Err(HarnessError::Invalid(bad)),
        }
    }

    pub fn demand(&self) -> Option<DemandConfig> {
        match self.demand {
            DemandSpec::Synthetic { config, peak_window } => DemandConfig::synthetic(config, 0).ok().map(|mut d| {
                if let Some(w) = peak_window {
                    d.peak_window = w;
                }
                d
            }),
            DemandSpec::Constant { rate, pattern } => Some(DemandConfig::constant(rate, pattern, 0)),
            DemandSpec::None => None,
        }
    }

    /// Environment settings for `arm`.
    pub fn env_config(&self, map: &TrafficMap, arm: Arm) -> EnvConfig {
        let router = match arm {
            Arm::FtNoEmv | Arm::WStaticFt | Arm::WStaticMp => RouterKind::Static,
            Arm::WDynamicFt | Arm::WDynamicMp => RouterKind::Periodic {
                period: self.router_period,
            },
            Arm::EmvLight => RouterKind::Dynamic,
        };
        EnvConfig {
            episode_length: self.episode_length,
            dispatch_time: self.emv.dispatch_time,
            emv: arm.has_emv().then(|| self.trip(map)),
            router,
            demand: self.demand(),
            ..EnvConfig::default()
        }
    }

    /// Content hash of every effective parameter (the output directory excluded).
    pub fn hash(&self) -> String {
        let mut s = self.clone();
        s.output_dir = PathBuf::new();
        let json = serde_json::to_string(&s).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
