use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Triangular flow / vehicle-count relation of one lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalDiagram<F> {
    /// H: vehicle count at which flow vanishes.
    pub jam: F,
    /// F: vehicle count of maximum flow.
    pub critical: F,
    /// m/s.
    pub free_speed: F,
    /// m/s floor applied in congestion.
    pub min_speed: F,
}

impl<F: Float> FundamentalDiagram<F> {
    pub fn new(jam: F, critical: F, free_speed: F, min_speed: F) -> Result<Self, SimError> {
        let ok = critical > F::zero()
            && critical < jam
            && min_speed > F::zero()
            && free_speed >= min_speed
            && jam.is_finite()
            && free_speed.is_finite();
        if !ok {
            return Err(SimError::InvalidConfig(format!(
                "fundamental diagram needs 0 < F < H and 0 < v_min <= v_free (H={:?}, F={:?}, v_free={:?}, v_min={:?})",
                jam.to_f64(),
                critical.to_f64(),
                free_speed.to_f64(),
                min_speed.to_f64()
            )));
        }
        Ok(FundamentalDiagram {
            jam,
            critical,
            free_speed,
            min_speed,
        })
    }

    /// Diagram for a lane of capacity `capacity`, with the critical count at
    /// `round(ratio * capacity)` (26 -> 8).
    pub fn for_capacity(capacity: usize, ratio: F, free_speed: F, min_speed: F) -> Result<Self, SimError> {
        let jam = F::from(capacity).unwrap();
        let mut critical = (ratio * jam).round();
        if !(critical > F::zero() && critical < jam) {
            critical = ratio * jam;
        }
        Self::new(jam, critical, free_speed, min_speed)
    }

    /// q_max = v_free * F.
    pub fn max_flow(&self) -> F {
        self.free_speed * self.critical
    }

    /// Flow at `n` vehicles (vehicle-m/s).
    pub fn flow(&self, n: F) -> F {
        if n <= self.critical {
            self.free_speed * n
        } else {
            self.max_flow() * (self.jam - n) / (self.jam - self.critical)
        }
    }
}

/// Space-mean speed of a lane holding `n` vehicles.
pub fn lane_speed<F: Float>(n: F, fd: &FundamentalDiagram<F>) -> Result<F, SimError> {
    if n > fd.jam || n < F::zero() {
        return Err(SimError::OverJam {
            count: n.to_f64().unwrap_or(f64::NAN),
            jam: fd.jam.to_f64().unwrap_or(f64::NAN),
        });
    }
    if n <= fd.critical {
        return Ok(fd.free_speed);
    }
    Ok((fd.flow(n) / n).max(fd.min_speed))
}

/// EMV speed with `blocking` non-EMVs remaining ahead on its lane:
/// `v_free + (v_emv - v_free) / (1 + k)`.
pub fn emv_speed<F: Float>(blocking: F, emv_free_speed: F, free_speed: F) -> F {
    free_speed + (emv_free_speed - free_speed) / (F::one() + blocking)
}

/// Default EMV free-flow speed, m/s.
pub const EMV_FREE_SPEED: f64 = 12.0;
/// Default non-EMV free-flow speed, m/s.
pub const FREE_SPEED: f64 = 6.0;

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_fd() -> FundamentalDiagram<f64> {
        FundamentalDiagram::new(26.0, 8.0, 6.0, 0.5).unwrap()
    }

    #[test]
    fn free_flow_below_critical() {
        let fd = paper_fd();
        assert_eq!(lane_speed(0.0, &fd).unwrap(), 6.0);
        assert_eq!(lane_speed(8.0, &fd).unwrap(), 6.0);
    }

    #[test]
    fn congested_branch_hand_value() {
        // q = 48 * 9/18 = 24, v = 24/17.
        let v = lane_speed(17.0, &paper_fd()).unwrap();
        assert!((v - 24.0 / 17.0).abs() < 1e-12);
        assert!((v - 1.412).abs() < 1e-3);
    }

    #[test]
    fn floor_at_jam() {
        assert_eq!(lane_speed(26.0, &paper_fd()).unwrap(), 0.5);
        assert!(matches!(lane_speed(27.0, &paper_fd()), Err(SimError::OverJam { .. })));
    }

    #[test]
    fn speed_is_non_increasing() {
        let fd = paper_fd();
        let speeds: Vec<f64> = (0..=26).map(|n| lane_speed(n as f64, &fd).unwrap()).collect();
        assert!(speeds.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn default_capacity_matches_hand_diagram() {
        let fd = FundamentalDiagram::for_capacity(26, 0.3, FREE_SPEED, 0.5).unwrap();
        assert_eq!(fd, paper_fd());
        let fd32 = FundamentalDiagram::<f32>::for_capacity(26, 0.3, 6.0, 0.5).unwrap();
        assert_eq!(lane_speed(17.0f32, &fd32).unwrap(), 24.0f32 / 17.0);
    }

    #[test]
    fn invalid_diagrams() {
        assert!(FundamentalDiagram::new(10.0, 10.0, 6.0, 0.5).is_err());
        assert!(FundamentalDiagram::new(10.0, 3.0, 6.0, 0.0).is_err());
    }

    #[test]
    fn emv_speed_values() {
        assert_eq!(emv_speed(0.0, 12.0, 6.0), 12.0);
        assert_eq!(emv_speed(1.0, 12.0, 6.0), 9.0);
        assert_eq!(emv_speed(2.0, 12.0, 6.0), 8.0);
        let far = emv_speed(1e6, 12.0, 6.0);
        assert!(far > 6.0 && far - 6.0 < 1e-5);
        for k in 0..50 {
            assert!(emv_speed(k as f64 + 1.0, 12.0, 6.0) < emv_speed(k as f64, 12.0, 6.0));
        }
    }
}
