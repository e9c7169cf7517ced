//! The MDP wrapper: one step is a block of simulator substeps under fixed actions,
//! followed by routing refresh, agent typing and rewards.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::PathRouter;
use crate::error::EnvError;
use crate::network::{LinkId, NodeId, TrafficMap};
use crate::rlcore::{
    self, adjusted_rewards, classify_agents, hop_distances, local_reward, AgentTypes, EmvView, RewardConfig,
    RoutingCache,
};
use crate::route::{self, RoutingState, TravelTimeField, REMAIN_FRACTION};
use crate::sim::{DemandConfig, EmvGuide, Metrics, SimConfig, SimState};

/// How the EMV picks its next intersection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RouterKind {
    /// One A* search at dispatch, followed to the end.
    Static,
    /// A* from the EMV's next intersection every `period` seconds.
    Periodic { period: f64 },
    /// Per-step relaxation of the ETA / Next tables.
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmvTrip {
    pub origin: NodeId,
    pub dest: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Seconds.
    pub episode_length: f64,
    /// Seconds per MDP step.
    pub step_length: f64,
    /// Seconds; ignored without a trip.
    pub dispatch_time: f64,
    pub emv: Option<EmvTrip>,
    pub router: RouterKind,
    pub demand: Option<DemandConfig>,
    pub sim: SimConfig,
    pub reward: RewardConfig,
    /// Spatial discount α.
    pub alpha: f64,
    pub remain_fraction: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            episode_length: 1200.0,
            step_length: 5.0,
            dispatch_time: 600.0,
            emv: None,
            router: RouterKind::Dynamic,
            demand: None,
            sim: SimConfig::default(),
            reward: RewardConfig::default(),
            alpha: 0.9,
            remain_fraction: REMAIN_FRACTION,
        }
    }
}

impl EnvConfig {
    pub fn steps_per_episode(&self) -> usize {
        (self.episode_length / self.step_length).round() as usize
    }

    pub fn substeps_per_step(&self) -> usize {
        (self.step_length / self.sim.substep).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    pub adjusted: Vec<f64>,
    pub types: AgentTypes,
    pub done: bool,
}

/// Guide view of the active router.
enum Guide<'a> {
    Path(&'a PathRouter),
    Table(&'a RoutingState<f64>, &'a TravelTimeField<f64>),
}

impl EmvGuide for Guide<'_> {
    fn next_link(&self, map: &TrafficMap, node: NodeId, arriving: LinkId) -> Option<LinkId> {
        let hop = match self {
            Guide::Path(p) => p.next_after(node),
            Guide::Table(rs, f) => route::next_hop_for_emv(rs, map, f, node, Some(arriving)).ok(),
        }?;
        map.link_between(node, hop)
    }
}

#[derive(Debug, Clone)]
pub struct Env {
    map: Arc<TrafficMap>,
    cfg: EnvConfig,
    sim: SimState,
    field: TravelTimeField<f64>,
    table: Option<RoutingState<f64>>,
    path: Option<PathRouter>,
    cache: RoutingCache,
    hops: Vec<Vec<usize>>,
    types: AgentTypes,
    /// Link whose midpoint the EMV passed most recently.
    half_passed: Option<LinkId>,
    steps: usize,
    route_unreachable: bool,
}

impl Env {
    pub fn new(map: Arc<TrafficMap>, cfg: EnvConfig, seed: u64) -> Result<Self, EnvError> {
        if let Some(d) = &cfg.demand {
            d.validate(cfg.episode_length)?;
        }
        if let Some(trip) = cfg.emv {
            for n in [trip.origin, trip.dest] {
                if !map.is_intersection(n) {
                    return Err(crate::SimError::NotIntersection(n.0).into());
                }
            }
            if trip.origin == trip.dest {
                return Err(crate::SimError::DegenerateEmvTrip(trip.origin.0).into());
            }
        }
        let demand = cfg.demand.clone().map(|mut d| {
            d.seed = d.seed.wrapping_add(seed);
            d
        });
        let sim = SimState::new(map.clone(), cfg.sim.clone(), demand, seed)?;
        let field = route::estimate_travel_times(&sim, cfg.remain_fraction);
        let table = match cfg.emv {
            Some(trip) => Some(route::prepopulate(&map, &field, trip.dest)?),
            None => None,
        };
        let n = map.intersection_count();
        let cache = match &table {
            Some(t) => RoutingCache::freeze(&map, t.eta_table(), t.next_table(), cfg.episode_length, 0.0),
            None => RoutingCache::empty(n),
        };
        Ok(Env {
            hops: hop_distances(&map),
            types: classify_agents(&map, None, None),
            map,
            cfg,
            sim,
            field,
            table,
            path: None,
            cache,
            half_passed: None,
            steps: 0,
            route_unreachable: false,
        })
    }

    pub fn map(&self) -> &Arc<TrafficMap> {
        &self.map
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn sim(&self) -> &SimState {
        &self.sim
    }

    pub fn agent_count(&self) -> usize {
        self.map.intersection_count()
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn done(&self) -> bool {
        self.steps >= self.cfg.steps_per_episode()
    }

    pub fn types(&self) -> &AgentTypes {
        &self.types
    }

    pub fn field(&self) -> &TravelTimeField<f64> {
        &self.field
    }

    pub fn routing_table(&self) -> Option<&RoutingState<f64>> {
        self.table.as_ref()
    }

    pub fn path_router(&self) -> Option<&PathRouter> {
        self.path.as_ref()
    }

    pub fn cache(&self) -> &RoutingCache {
        &self.cache
    }

    /// Set when a router could not find a path at some point this episode.
    pub fn route_unreachable(&self) -> bool {
        self.route_unreachable || self.path.as_ref().is_some_and(|p| p.stale)
    }

    pub fn metrics(&self) -> Metrics {
        self.sim.metrics()
    }

    /// The EMV's intended next intersection after the head of its current link.
    pub fn emv_next_hop(&self) -> Option<NodeId> {
        let loc = self.sim.emv_location()?;
        let link = self.map.link(loc.link);
        let node = link.to;
        if !self.map.is_intersection(node) {
            return None;
        }
        let hop = match (&self.path, &self.table) {
            (Some(p), _) => p.next_after(node),
            (None, Some(t)) => route::next_hop_for_emv(t, &self.map, &self.field, node, Some(loc.link)).ok(),
            _ => None,
        };
        hop.filter(|&h| h != node)
    }

    pub fn emv_view(&self) -> Option<EmvView> {
        let loc = self.sim.emv_location()?;
        Some(EmvView {
            link: loc.link,
            remaining: self.map.link(loc.link).length - loc.position,
        })
    }

    /// Local state of every agent.
    pub fn local_states(&self) -> Vec<Vec<f64>> {
        let emv = self.emv_view();
        self.map
            .intersections()
            .map(|i| rlcore::local_state(&self.map, &self.sim, i, &self.types, emv, &self.cache))
            .collect()
    }

    /// Actor observation (scale 1) or critic observation (scale α) of every agent.
    pub fn observations(&self, locals: &[Vec<f64>], neighbour_scale: f64) -> Vec<Vec<f64>> {
        self.map
            .intersections()
            .map(|i| rlcore::observation(&self.map, locals, i, neighbour_scale))
            .collect()
    }

    fn dispatch(&mut self) -> Result<(), EnvError> {
        let Some(trip) = self.cfg.emv else {
            return Ok(());
        };
        self.sim.dispatch_emv(trip.origin, trip.dest)?;
        let field = route::estimate_travel_times(&self.sim, self.cfg.remain_fraction);
        self.field = field;
        match self.cfg.router {
            RouterKind::Static => {
                self.path = Some(PathRouter::new(
                    &self.map,
                    &self.field,
                    trip.origin,
                    trip.dest,
                    None,
                    self.sim.clock(),
                )?);
            }
            RouterKind::Periodic { period } => {
                self.path = Some(PathRouter::new(
                    &self.map,
                    &self.field,
                    trip.origin,
                    trip.dest,
                    Some(period),
                    self.sim.clock(),
                )?);
            }
            RouterKind::Dynamic => {}
        }
        Ok(())
    }

    /// Runs one MDP step with `actions[i]` the phase slot of intersection `i`.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError> {
        let n = self.agent_count();
        if actions.len() != n {
            return Err(EnvError::ActionCount {
                expected: n,
                got: actions.len(),
            });
        }
        for _ in 0..self.cfg.substeps_per_step() {
            let clock = self.sim.clock();
            if self.cfg.emv.is_some() && self.sim.emv().is_none() && clock >= self.cfg.dispatch_time {
                self.dispatch()?;
            }
            if let (Some(p), Some(loc)) = (self.path.as_mut(), self.sim.emv_location()) {
                if p.due(clock) {
                    let field = route::estimate_travel_times(&self.sim, self.cfg.remain_fraction);
                    p.refresh(&self.map, &field, loc.link, clock);
                }
            }
            let guide = match (&self.path, &self.table) {
                (Some(p), _) => Guide::Path(p),
                (None, Some(t)) => Guide::Table(t, &self.field),
                (None, None) => Guide::Path(&EMPTY_PATH),
            };
            self.sim.step(actions, &guide)?;
        }
        self.steps += 1;
        self.field = route::estimate_travel_times(&self.sim, self.cfg.remain_fraction);
        if let Some(t) = &self.table {
            let mut next = route::relax_step(t, &self.map, &self.field);
            next.updated_at = self.sim.clock();
            if !next.unreachable().is_empty() {
                self.route_unreachable = true;
            }
            self.table = Some(next);
        }
        self.refresh_cache();
        let emv_link = self.sim.emv_location().map(|l| l.link);
        self.types = classify_agents(&self.map, emv_link, self.emv_next_hop());
        let rewards: Vec<f64> = self
            .map
            .intersections()
            .map(|i| local_reward(&self.map, &self.sim, i, &self.types, &self.cfg.reward))
            .collect();
        let adjusted = adjusted_rewards(&rewards, self.cfg.alpha, &self.hops);
        Ok(StepOutcome {
            rewards,
            adjusted,
            types: self.types.clone(),
            done: self.done(),
        })
    }

    /// Routing features are re-frozen at the step the EMV passes a link's midpoint.
    fn refresh_cache(&mut self) {
        let Some(loc) = self.sim.emv_location() else {
            return;
        };
        let half = self.map.link(loc.link).length / 2.0;
        if loc.position >= half && self.half_passed != Some(loc.link) {
            self.half_passed = Some(loc.link);
            if let Some(t) = &self.table {
                self.cache = RoutingCache::freeze(
                    &self.map,
                    t.eta_table(),
                    t.next_table(),
                    self.cfg.episode_length,
                    self.sim.clock(),
                );
            }
        }
    }
}

static EMPTY_PATH: PathRouter = PathRouter::empty();
