use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::network::{Direction, LinkId, LinkKind, TrafficMap};

/// Origin/destination pattern of background traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OdPattern {
    /// Enter from the north and south edges, leave towards east and west.
    NsToEw,
    /// Any source, any sink except the U-turn back out of the entry side.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandConfig {
    /// veh/lane/hour outside the peak window.
    pub non_peak_rate: f64,
    /// veh/lane/hour inside the peak window.
    pub peak_rate: f64,
    /// [start, end) in seconds.
    pub peak_window: (f64, f64),
    pub pattern: OdPattern,
    pub seed: u64,
}

impl DemandConfig {
    /// Synthetic-grid configurations 1-4: (200, 240) and (160, 320) veh/lane/hr with the
    /// peak between 400 s and 800 s; 1-2 are north/south to east/west, 3-4 random.
    pub fn synthetic(config: u8, seed: u64) -> Result<Self, SimError> {
        let (non_peak_rate, peak_rate, pattern) = match config {
            1 => (200.0, 240.0, OdPattern::NsToEw),
            2 => (160.0, 320.0, OdPattern::NsToEw),
            3 => (200.0, 240.0, OdPattern::Random),
            4 => (160.0, 320.0, OdPattern::Random),
            other => {
                return Err(SimError::InvalidDemand(format!(
                    "unknown demand configuration {other} (expected 1-4)"
                )))
            }
        };
        Ok(DemandConfig {
            non_peak_rate,
            peak_rate,
            peak_window: (400.0, 800.0),
            pattern,
            seed,
        })
    }

    /// Constant-rate demand.
    pub fn constant(rate: f64, pattern: OdPattern, seed: u64) -> Self {
        DemandConfig {
            non_peak_rate: rate,
            peak_rate: rate,
            peak_window: (0.0, 0.0),
            pattern,
            seed,
        }
    }

    pub fn validate(&self, episode_length: f64) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidDemand(m));
        if !(self.non_peak_rate >= 0.0 && self.peak_rate >= 0.0)
            || !self.non_peak_rate.is_finite()
            || !self.peak_rate.is_finite()
        {
            return bad("rates must be finite and non-negative".into());
        }
        let (s, e) = self.peak_window;
        if !(0.0 <= s && s <= e && e <= episode_length) {
            return bad(format!("peak window [{s}, {e}] must lie within [0, {episode_length}]"));
        }
        Ok(())
    }

    /// Rate in veh/lane/hour at time `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        let (s, e) = self.peak_window;
        if t >= s && t < e {
            self.peak_rate
        } else {
            self.non_peak_rate
        }
    }

    /// Scales both rates, keeping everything else.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.non_peak_rate *= factor;
        self.peak_rate *= factor;
        self
    }
}

/// Source links that generate demand under `pattern`.
pub fn origin_links(map: &TrafficMap, pattern: OdPattern) -> Vec<LinkId> {
    map.links()
        .iter()
        .filter(|l| l.kind == LinkKind::Source)
        .filter(|l| match pattern {
            OdPattern::Random => true,
            OdPattern::NsToEw => matches!(l.approach(), Direction::North | Direction::South),
        })
        .map(|l| l.id)
        .collect()
}

/// Sink links a trip entering on `origin` may end at.
pub fn destination_links(map: &TrafficMap, pattern: OdPattern, origin: LinkId) -> Vec<LinkId> {
    let o = map.link(origin);
    map.links()
        .iter()
        .filter(|l| l.kind == LinkKind::Sink)
        .filter(|l| match pattern {
            OdPattern::NsToEw => matches!(l.heading, Direction::East | Direction::West),
            OdPattern::Random => true,
        })
        // No U-turn back out through the entry side.
        .filter(|l| !(l.from == o.to && l.heading == o.heading.opposite()))
        .map(|l| l.id)
        .collect()
}
