//! Pressure, agent types, local states, rewards and spatially discounted rewards.

use std::collections::VecDeque;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::lit;
use crate::network::{Direction, LaneId, LinkId, NodeId, TrafficMap, PHASE_SLOTS};
use crate::sim::LaneCounts;

fn density<F: Float, C: LaneCounts + ?Sized>(map: &TrafficMap, counts: &C, lane: LaneId) -> F {
    F::from(counts.count(lane)).unwrap() / F::from(map.lane_capacity(lane)).unwrap()
}

/// w(l) from densities: `incoming` minus the lane-averaged density of every target
/// link, in absolute value. `targets[k]` holds the lane densities of target link k.
pub fn lane_pressure_from_densities<F: Float>(incoming: F, targets: &[Vec<F>]) -> F {
    let mut out = F::zero();
    for link in targets {
        let h = F::from(link.len()).unwrap();
        for &d in link {
            out = out + d / h;
        }
    }
    (incoming - out).abs()
}

/// Internal links reachable from `lane` through its node's movements.
pub fn target_links(map: &TrafficMap, lane: LaneId) -> Vec<LinkId> {
    let link = map.lane_link(lane);
    if !map.is_intersection(link.to) {
        return Vec::new();
    }
    map.phase_table(link.to)
        .link_moves
        .iter()
        .filter(|m| m.from_link == link.id && map.link(m.to_link).is_internal())
        .map(|m| m.to_link)
        .collect()
}

/// Lane pressure w(l).
pub fn lane_pressure<F: Float, C: LaneCounts + ?Sized>(map: &TrafficMap, counts: &C, lane: LaneId) -> F {
    let targets: Vec<Vec<F>> = target_links(map, lane)
        .into_iter()
        .map(|t| map.link(t).lanes.iter().map(|&m| density(map, counts, m)).collect())
        .collect();
    lane_pressure_from_densities(density(map, counts, lane), &targets)
}

/// Internal incoming lanes of an intersection.
pub fn internal_incoming_lanes(map: &TrafficMap, node: NodeId) -> impl Iterator<Item = LaneId> + '_ {
    map.incoming(node)
        .iter()
        .filter(|&&l| map.link(l).is_internal())
        .flat_map(move |&l| map.link(l).lanes.iter().copied())
}

/// P_i: mean lane pressure over internal incoming lanes (0 when there are none).
pub fn intersection_pressure<F: Float, C: LaneCounts + ?Sized>(map: &TrafficMap, counts: &C, node: NodeId) -> F {
    let mut sum = F::zero();
    let mut n = 0usize;
    for lane in internal_incoming_lanes(map, node) {
        sum = sum + lane_pressure(map, counts, lane);
        n += 1;
    }
    if n == 0 {
        F::zero()
    } else {
        sum / F::from(n).unwrap()
    }
}

/// |sum of d(l) - d(m)| over every lane-to-lane pair between internal lanes.
pub fn presslight_pressure<F: Float, C: LaneCounts + ?Sized>(map: &TrafficMap, counts: &C, node: NodeId) -> F {
    let mut sum = F::zero();
    for m in &map.phase_table(node).link_moves {
        let (from, to) = (map.link(m.from_link), map.link(m.to_link));
        if !from.is_internal() || !to.is_internal() {
            continue;
        }
        for &l in &from.lanes {
            for &o in &to.lanes {
                sum = sum + density(map, counts, l) - density(map, counts, o);
            }
        }
    }
    sum.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PressureKind {
    /// Absolute lane pressure averaged over incoming lanes.
    Lane,
    /// Lane-pair density differences.
    PressLight,
}

pub fn pressure<F: Float, C: LaneCounts + ?Sized>(kind: PressureKind, map: &TrafficMap, counts: &C, node: NodeId) -> F {
    match kind {
        PressureKind::Lane => intersection_pressure(map, counts, node),
        PressureKind::PressLight => presslight_pressure(map, counts, node),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentType {
    Normal,
    Primary,
    Secondary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentTypes {
    pub types: Vec<AgentType>,
    pub primary: Option<NodeId>,
    pub secondary: Option<NodeId>,
}

impl AgentTypes {
    /// Link i_p -> i_s when both exist.
    pub fn pre_emption_link(&self, map: &TrafficMap) -> Option<LinkId> {
        map.link_between(self.primary?, self.secondary?)
    }
}

/// i_p is the head of the link carrying the EMV; i_s is the EMV's next hop from i_p,
/// left unassigned when it coincides with i_p.
pub fn classify_agents(map: &TrafficMap, emv_link: Option<LinkId>, next_hop: Option<NodeId>) -> AgentTypes {
    let n = map.intersection_count();
    let mut types = vec![AgentType::Normal; n];
    let primary = emv_link.map(|l| map.link(l).to).filter(|&p| map.is_intersection(p));
    let secondary = primary
        .and(next_hop)
        .filter(|&s| Some(s) != primary && map.is_intersection(s));
    if let Some(p) = primary {
        types[p.0] = AgentType::Primary;
    }
    if let Some(s) = secondary {
        types[s.0] = AgentType::Secondary;
    }
    AgentTypes {
        types,
        primary,
        secondary,
    }
}

/// Routing features as seen by the agents, refreshed only at chosen instants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingCache {
    /// ETA divided by the episode length.
    pub eta: Vec<f64>,
    /// Direction code of Next (0..3), -1 when unset.
    pub next_dir: Vec<f64>,
    pub frozen_at: f64,
}

impl RoutingCache {
    pub fn empty(n: usize) -> Self {
        RoutingCache {
            eta: vec![0.0; n],
            next_dir: vec![-1.0; n],
            frozen_at: 0.0,
        }
    }

    pub fn freeze(map: &TrafficMap, eta: &[f64], next: &[Option<NodeId>], episode_length: f64, clock: f64) -> Self {
        let next_dir = map
            .intersections()
            .map(|i| match next[i.0] {
                Some(j) if j != i => map
                    .link_between(i, j)
                    .map_or(-1.0, |l| map.link(l).heading.code() as f64),
                _ => -1.0,
            })
            .collect();
        let eta = eta
            .iter()
            .map(|&e| if e.is_finite() { e / episode_length } else { -1.0 })
            .collect();
        RoutingCache {
            eta,
            next_dir,
            frozen_at: clock,
        }
    }
}

/// Length of one local state for a map: 2·4·h_max lane counts, 4 EMV distances, ETA,
/// Next.
pub fn local_state_len(map: &TrafficMap) -> usize {
    8 * map.max_lanes() + 4 + 2
}

/// Where the EMV is: the link carrying it and meters still to go to its head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmvView {
    pub link: LinkId,
    pub remaining: f64,
}

/// Local state s_i: incoming lane counts by approach (N, E, S, W), outgoing lane counts by
/// heading, normalized EMV distance by approach, then the cached ETA and Next.
pub fn local_state<C: LaneCounts + ?Sized>(
    map: &TrafficMap,
    counts: &C,
    node: NodeId,
    types: &AgentTypes,
    emv: Option<EmvView>,
    cache: &RoutingCache,
) -> Vec<f64> {
    let h = map.max_lanes();
    let mut s = vec![0.0; local_state_len(map)];
    for dir in Direction::ALL {
        if let Some(l) = map.incoming_from(node, dir) {
            for (k, &lane) in map.link(l).lanes.iter().enumerate() {
                s[dir.code() * h + k] = counts.count(lane) as f64;
            }
        }
        if let Some(l) = map.outgoing_towards(node, dir) {
            for (k, &lane) in map.link(l).lanes.iter().enumerate() {
                s[4 * h + dir.code() * h + k] = counts.count(lane) as f64;
            }
        }
        s[8 * h + dir.code()] = -1.0;
    }
    if types.primary == Some(node) {
        if let Some(e) = emv {
            let link = map.link(e.link);
            s[8 * h + link.approach().code()] = (e.remaining / link.length).clamp(0.0, 1.0);
        }
    }
    s[8 * h + 4] = cache.eta[node.0];
    s[8 * h + 5] = cache.next_dir[node.0];
    s
}

/// Own block followed by the N, E, S, W neighbours' blocks (zeros where absent), the
/// neighbour blocks multiplied by `neighbour_scale`.
pub fn observation(map: &TrafficMap, locals: &[Vec<f64>], node: NodeId, neighbour_scale: f64) -> Vec<f64> {
    let len = local_state_len(map);
    let mut out = Vec::with_capacity(5 * len);
    out.extend_from_slice(&locals[node.0]);
    for dir in Direction::ALL {
        match map.neighbor(node, dir) {
            Some(j) => out.extend(locals[j.0].iter().map(|&v| v * neighbour_scale)),
            None => out.extend(std::iter::repeat_n(0.0, len)),
        }
    }
    out
}

/// Neighbours' previous policies in N, E, S, W order, zeros where absent.
pub fn fingerprints(map: &TrafficMap, policies: &[Vec<f64>], node: NodeId) -> Vec<f64> {
    let mut out = Vec::with_capacity(4 * PHASE_SLOTS);
    for dir in Direction::ALL {
        match map.neighbor(node, dir) {
            Some(j) => out.extend_from_slice(&policies[j.0]),
            None => out.extend(std::iter::repeat_n(0.0, PHASE_SLOTS)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub beta: f64,
    pub pressure: PressureKind,
    /// When false, the primary agent is rewarded as a normal one.
    pub primary: bool,
    /// When false, the secondary agent is rewarded as a normal one.
    pub secondary: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            beta: 0.5,
            pressure: PressureKind::Lane,
            primary: true,
            secondary: true,
        }
    }
}

/// Secondary reward from its parts: -β·P - (1-β)·mean density of the i_p -> i_s link.
pub fn secondary_reward<F: Float>(beta: F, pressure: F, link_densities: &[F]) -> F {
    let n = F::from(link_densities.len()).unwrap();
    let mut mean = F::zero();
    for &d in link_densities {
        mean = mean + d / n;
    }
    -beta * pressure - (F::one() - beta) * mean
}

pub fn local_reward<F: Float, C: LaneCounts + ?Sized>(
    map: &TrafficMap,
    counts: &C,
    node: NodeId,
    types: &AgentTypes,
    cfg: &RewardConfig,
) -> F {
    let p = || pressure::<F, C>(cfg.pressure, map, counts, node);
    match types.types[node.0] {
        AgentType::Primary if cfg.primary => -F::one(),
        AgentType::Secondary if cfg.secondary => match types.pre_emption_link(map) {
            Some(link) => {
                let d: Vec<F> = map.link(link).lanes.iter().map(|&l| density(map, counts, l)).collect();
                secondary_reward(lit(cfg.beta), p(), &d)
            }
            None => -p(),
        },
        _ => -p(),
    }
}

/// Hop distances between intersections over internal links in either direction.
pub fn hop_distances(map: &TrafficMap) -> Vec<Vec<usize>> {
    let n = map.intersection_count();
    let mut adj = vec![Vec::new(); n];
    for l in map.links().iter().filter(|l| l.is_internal()) {
        adj[l.from.0].push(l.to.0);
        adj[l.to.0].push(l.from.0);
    }
    (0..n)
        .map(|s| {
            let mut dist = vec![usize::MAX; n];
            dist[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            dist
        })
        .collect()
}

/// r~_i = sum over d of α^d times the summed rewards of agents at hop distance d.
pub fn adjusted_reward<F: Float>(i: usize, rewards: &[F], alpha: F, hops: &[Vec<usize>]) -> F {
    let dist = &hops[i];
    let max_d = dist.iter().copied().filter(|&d| d != usize::MAX).max().unwrap_or(0);
    let mut shells = vec![F::zero(); max_d + 1];
    for (j, &r) in rewards.iter().enumerate() {
        if dist[j] != usize::MAX {
            shells[dist[j]] = shells[dist[j]] + r;
        }
    }
    let mut out = F::zero();
    for (d, &s) in shells.iter().enumerate() {
        out = out + alpha.powi(d as i32) * s;
    }
    out
}

pub fn adjusted_rewards<F: Float>(rewards: &[F], alpha: F, hops: &[Vec<usize>]) -> Vec<F> {
    (0..rewards.len())
        .map(|i| adjusted_reward(i, rewards, alpha, hops))
        .collect()
}
