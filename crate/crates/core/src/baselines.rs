//! Classical controllers and EMV routers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Env;
use crate::error::RouteError;
use crate::network::{LinkId, NodeId, TrafficMap, PHASE_SLOTS};
use crate::route::{astar_avoiding, TravelTimeField};
use crate::sim::LaneCounts;

/// Picks one action slot per intersection before each MDP step.
pub trait Controller {
    fn actions(&mut self, env: &Env) -> Vec<usize>;
}

/// Plays `env` to the end under `ctrl`.
pub fn run_episode(env: &mut Env, ctrl: &mut dyn Controller) -> Result<crate::sim::Metrics, crate::EnvError> {
    while !env.done() {
        let a = ctrl.actions(env);
        env.step(&a)?;
    }
    Ok(env.metrics())
}

/// Slot of the fixed-time cycle at `clock`: equal `split`-second greens over the 8
/// slots, shifted by `offset`.
pub fn fixed_time(clock: f64, split: f64, offset: f64) -> usize {
    let cycle = split * PHASE_SLOTS as f64;
    let t = (clock + offset).rem_euclid(cycle);
    ((t / split).floor() as usize).min(PHASE_SLOTS - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedTime {
    pub split: f64,
    pub offsets: Vec<f64>,
}

impl FixedTime {
    /// Offsets are whole multiples of 5 s within one cycle, drawn from `seed`.
    pub fn new(intersections: usize, split: f64, seed: u64) -> Self {
        assert!(split >= 5.0, "green split below the minimum dwell");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        let slots = ((split * PHASE_SLOTS as f64) / 5.0).floor() as u64;
        let offsets = (0..intersections)
            .map(|_| rng.random_range(0..slots.max(1)) as f64 * 5.0)
            .collect();
        FixedTime { split, offsets }
    }
}

impl Controller for FixedTime {
    fn actions(&mut self, env: &Env) -> Vec<usize> {
        let clock = env.sim().clock();
        self.offsets.iter().map(|&o| fixed_time(clock, self.split, o)).collect()
    }
}

/// Signed lane-to-lane density differences summed over the non-right moves each phase
/// permits.
pub fn phase_scores<C: LaneCounts + ?Sized>(map: &TrafficMap, counts: &C, node: NodeId) -> Vec<f64> {
    let table = map.phase_table(node);
    let d = |l| counts.count(l) as f64 / map.lane_capacity(l) as f64;
    let mut scores = vec![0.0; table.len()];
    for m in &table.link_moves {
        if m.turn == crate::network::Turn::Right {
            continue;
        }
        let mut s = 0.0;
        for &l in &map.link(m.from_link).lanes {
            for &o in &map.link(m.to_link).lanes {
                s += d(l) - d(o);
            }
        }
        for (p, score) in scores.iter_mut().enumerate() {
            if m.phase_mask & (1 << p) != 0 {
                *score += s;
            }
        }
    }
    scores
}

/// Phase index with the largest score, ties to the lowest index.
pub fn max_pressure_phase<C: LaneCounts + ?Sized>(map: &TrafficMap, counts: &C, node: NodeId) -> usize {
    let scores = phase_scores(map, counts, node);
    let mut best = 0;
    for (p, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = p;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MaxPressure;

impl Controller for MaxPressure {
    fn actions(&mut self, env: &Env) -> Vec<usize> {
        let map = env.map();
        map.intersections()
            .map(|i| {
                let p = max_pressure_phase(map, env.sim(), i);
                map.phase_table(i).slot_of(p).unwrap_or(0)
            })
            .collect()
    }
}

/// Distance at which the next intersection after i_p is also pre-empted, meters.
pub const GREEN_WAVE_TRIGGER: f64 = 100.0;

/// Forces the phase serving the EMV at i_p, and at i_s once the EMV is within the
/// trigger distance of i_p; every other intersection follows `base`.
#[derive(Debug, Clone)]
pub struct GreenWave<C> {
    pub base: C,
    pub trigger: f64,
}

impl<C> GreenWave<C> {
    pub fn new(base: C) -> Self {
        GreenWave {
            base,
            trigger: GREEN_WAVE_TRIGGER,
        }
    }
}

fn slot_serving(map: &TrafficMap, node: NodeId, from: LinkId, to: LinkId) -> Option<usize> {
    let table = map.phase_table(node);
    table.slot_of(table.first_permitting(from, to)?)
}

/// Overrides `actions` where the EMV needs a green; returns the nodes changed.
pub fn green_wave_overrides(env: &Env, actions: &mut [usize], trigger: f64) -> Vec<NodeId> {
    let mut forced = Vec::new();
    let (Some(view), Some(next)) = (env.emv_view(), env.emv_next_hop()) else {
        return forced;
    };
    let map = env.map();
    let ip = map.link(view.link).to;
    let Some(out) = map.link_between(ip, next) else {
        return forced;
    };
    if let Some(slot) = slot_serving(map, ip, view.link, out) {
        actions[ip.0] = slot;
        forced.push(ip);
    }
    if view.remaining <= trigger && next != ip {
        let after = match (env.path_router(), env.routing_table()) {
            (Some(p), _) => p.next_after(next),
            (None, Some(t)) => crate::route::next_hop_for_emv(t, map, env.field(), next, Some(out)).ok(),
            _ => None,
        };
        if let Some(after) = after.filter(|&a| a != next) {
            if let Some(slot) = map
                .link_between(next, after)
                .and_then(|l| slot_serving(map, next, out, l))
            {
                actions[next.0] = slot;
                forced.push(next);
            }
        }
    }
    forced
}

impl<C: Controller> Controller for GreenWave<C> {
    fn actions(&mut self, env: &Env) -> Vec<usize> {
        let mut a = self.base.actions(env);
        green_wave_overrides(env, &mut a, self.trigger);
        a
    }
}

/// EMV path follower with optional periodic A* refresh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRouter {
    pub path: Vec<NodeId>,
    pub dest: Option<NodeId>,
    /// Seconds between refreshes; `None` = never.
    pub period: Option<f64>,
    pub last_refresh: f64,
    /// Set when a refresh found no path and the old one was kept.
    pub stale: bool,
}

impl PathRouter {
    pub const fn empty() -> Self {
        PathRouter {
            path: Vec::new(),
            dest: None,
            period: None,
            last_refresh: 0.0,
            stale: false,
        }
    }

    pub fn new(
        map: &TrafficMap,
        field: &TravelTimeField<f64>,
        origin: NodeId,
        dest: NodeId,
        period: Option<f64>,
        clock: f64,
    ) -> Result<Self, RouteError> {
        Ok(PathRouter {
            path: astar_avoiding(map, field, origin, dest, None)?,
            dest: Some(dest),
            period,
            last_refresh: clock,
            stale: false,
        })
    }

    pub fn due(&self, clock: f64) -> bool {
        self.period.is_some_and(|p| clock - self.last_refresh >= p - 1e-9)
    }

    /// Re-plans from the head of `link` without turning back along it.
    pub fn refresh(&mut self, map: &TrafficMap, field: &TravelTimeField<f64>, link: LinkId, clock: f64) {
        self.last_refresh = clock;
        let Some(dest) = self.dest else { return };
        let l = map.link(link);
        if !map.is_intersection(l.to) {
            return;
        }
        let back = l.is_internal().then_some(l.from);
        match astar_avoiding(map, field, l.to, dest, back) {
            Ok(p) => self.path = p,
            Err(_) => self.stale = true,
        }
    }

    pub fn next_after(&self, node: NodeId) -> Option<NodeId> {
        let i = self.path.iter().position(|&n| n == node)?;
        self.path.get(i + 1).copied()
    }
}
