//! Desk-scale laboratory for emergency-vehicle (EMV) aware traffic signal control.
//!
//! The crate contains everything that is not learning machinery:
//!
//! - [`network`]: grid and one-way (Manhattan-style) traffic maps, lanes, movements and
//!   the canonical 8-phase tables.
//! - [`sim`]: a mesoscopic, discrete-time simulator with fundamental-diagram lane
//!   speeds, phase-gated crossings, EMV pull-over dynamics and Poisson demand.
//! - [`route`]: static Dijkstra pre-population, the parallel Bellman relaxation used for
//!   dynamic EMV routing, intra-link travel-time estimation and A*.
//! - [`rlcore`]: pressure, agent typing, local states, rewards and spatially discounted
//!   rewards.
//! - [`baselines`]: fixed-time, max-pressure, green-wave pre-emption and periodic A*.
//! - [`env`]: the 5-second MDP wrapper that glues the pieces together.
//!
//! Scalar-generic pieces (fundamental diagram, pressure, routing tables) are written
//! against [`num_traits::Float`]; the simulator itself runs in `f64` and the aliases
//! below name the concrete instantiations it uses.

pub mod baselines;
pub mod env;
pub mod error;
pub mod network;
pub mod rlcore;
pub mod route;
pub mod sim;

pub use error::{EnvError, NetworkError, RouteError, SimError};
pub use network::{Direction, LaneId, LinkId, NodeId, TrafficMap};

/// Fundamental diagram in double precision.
pub type FundamentalDiagram64 = sim::FundamentalDiagram<f64>;
/// Per-link EMV travel-time field in double precision.
pub type TravelTimeField64 = route::TravelTimeField<f64>;
/// ETA / Next routing table in double precision.
pub type RoutingState64 = route::RoutingState<f64>;

/// Converts an `f64` literal into any float type.
#[inline]
pub(crate) fn lit<F: num_traits::Float>(x: f64) -> F {
    F::from(x).expect("literal representable in target float type")
}
