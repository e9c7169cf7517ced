use thiserror::Error;

use crate::network::NodeId;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid map parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("map is not strongly connected: node {from} cannot reach node {to}")]
    NotStronglyConnected { from: usize, to: usize },
    #[error("inconsistent map: {0}")]
    Inconsistent(String),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("map file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("map file io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("vehicle count {count} exceeds jam count {jam}")]
    OverJam { count: f64, jam: f64 },
    #[error("intersection {node}: phase slot {slot} out of range (expected 0..8)")]
    BadPhase { node: usize, slot: usize },
    #[error("expected {expected} phase commands, got {got}")]
    PhaseCount { expected: usize, got: usize },
    #[error("an EMV is already active")]
    EmvAlreadyActive,
    #[error("EMV origin and destination coincide (node {0})")]
    DegenerateEmvTrip(usize),
    #[error("node {0} is not an intersection")]
    NotIntersection(usize),
    #[error("invalid demand: {0}")]
    InvalidDemand(String),
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RouteError {
    #[error("no route from node {from} towards destination {dest}")]
    Unreachable { from: NodeId, dest: NodeId },
    #[error("node {0} is not a routable intersection")]
    UnknownNode(NodeId),
    #[error("travel-time field has {got} entries, map has {expected} links")]
    FieldSize { expected: usize, got: usize },
    #[error("travel time on link {link} is not positive and finite: {value}")]
    BadTravelTime { link: usize, value: f64 },
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
}
