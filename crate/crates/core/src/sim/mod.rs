//! Mesoscopic traffic simulator.
//!
//! Time advances in fixed substeps (1 s by default). Within a substep the order is:
//! phase switching, demand generation and entry, EMV pull-over, movement along lanes,
//! intersection crossings, and finally the release of pulled-over vehicles.

mod demand;
mod fd;

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

pub use demand::{destination_links, origin_links, DemandConfig, OdPattern};
pub use fd::{emv_speed, lane_speed, FundamentalDiagram, EMV_FREE_SPEED, FREE_SPEED};

use crate::error::SimError;
use crate::network::{LaneId, LinkId, LinkKind, NodeId, TrafficMap, PHASE_SLOTS, VEHICLE_SPACING};
use crate::route::{self, RoutingState, TravelTimeField};

const AT_STOP_LINE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Seconds per substep.
    pub substep: f64,
    /// Minimum time a phase stays active, seconds.
    pub min_dwell: f64,
    /// Minimum front-to-front spacing on a lane, meters.
    pub headway: f64,
    pub free_speed: f64,
    pub emv_free_speed: f64,
    pub min_speed: f64,
    /// Critical count as a fraction of lane capacity.
    pub critical_ratio: f64,
    /// Per-substep probability that a vehicle ahead of the EMV pulls over.
    pub pull_over_prob: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            substep: 1.0,
            min_dwell: 5.0,
            headway: VEHICLE_SPACING,
            free_speed: FREE_SPEED,
            emv_free_speed: EMV_FREE_SPEED,
            min_speed: 0.5,
            critical_ratio: 0.3,
            pull_over_prob: 0.5,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(pos(self.substep)
            && self.min_dwell >= 0.0
            && pos(self.headway)
            && pos(self.free_speed)
            && pos(self.emv_free_speed)
            && pos(self.min_speed)
            && self.critical_ratio > 0.0
            && self.critical_ratio < 1.0
            && (0.0..=1.0).contains(&self.pull_over_prob))
        {
            return Err(SimError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VehicleId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleKind {
    Emv,
    Regular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: VehicleId,
    pub kind: VehicleKind,
    /// Links travelled so far and (for regular vehicles) still to travel. The EMV's
    /// route is extended one link at a time by its guide.
    pub route: Vec<LinkId>,
    pub cursor: usize,
    /// Meters from the start of the current lane.
    pub position: f64,
    pub spawn_time: f64,
    pub finish_time: Option<f64>,
    pub pulled_over: bool,
    /// Lane a pulled-over vehicle left.
    pub home_lane: Option<LaneId>,
}

impl Vehicle {
    pub fn is_emv(&self) -> bool {
        self.kind == VehicleKind::Emv
    }

    pub fn current_link(&self) -> LinkId {
        self.route[self.cursor]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneState {
    pub lane: LaneId,
    /// Ordered front (closest to the stop line) to back.
    pub vehicles: Vec<Vehicle>,
    /// Vehicles from the neighbouring lane pulled over into this one; inert.
    pub shoulder: Vec<Vehicle>,
    pub capacity: usize,
}

impl LaneState {
    /// x(l): every vehicle occupying the lane, pulled-over guests included.
    pub fn count(&self) -> usize {
        self.vehicles.len() + self.shoulder.len()
    }

    fn entry_open(&self, headway: f64) -> bool {
        self.count() < self.capacity && self.vehicles.last().is_none_or(|back| back.position >= headway)
    }
}

/// Where the EMV is right now.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmvLocation {
    pub lane: LaneId,
    pub link: LinkId,
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmvStatus {
    pub id: VehicleId,
    pub origin: NodeId,
    pub dest: NodeId,
    pub spawn_time: f64,
    pub finish_time: Option<f64>,
    /// Lane currently holding the EMV (`None` while queued for entry or finished).
    pub lane: Option<LaneId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub spawn_time: f64,
    pub finish_time: f64,
}

/// Running totals used for the conservation check.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Vehicles created (demand plus the EMV).
    pub generated: u64,
    /// Vehicles that left a pending queue onto a lane.
    pub entered: u64,
    pub completed: u64,
}

/// Decides the EMV's next link when it reaches a stop line.
pub trait EmvGuide {
    /// Link to take out of `node` after arriving on `arriving`; `None` = wait.
    fn next_link(&self, map: &TrafficMap, node: NodeId, arriving: LinkId) -> Option<LinkId>;
}

/// Guide that never lets the EMV leave its current link.
pub struct Hold;

impl EmvGuide for Hold {
    fn next_link(&self, _: &TrafficMap, _: NodeId, _: LinkId) -> Option<LinkId> {
        None
    }
}

/// Follows a fixed node path.
pub struct FollowPath(pub Vec<NodeId>);

impl EmvGuide for FollowPath {
    fn next_link(&self, map: &TrafficMap, node: NodeId, _: LinkId) -> Option<LinkId> {
        let i = self.0.iter().position(|&n| n == node)?;
        map.link_between(node, *self.0.get(i + 1)?)
    }
}

/// What happened to the EMV during one substep.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SubstepEvents {
    pub emv_entered: bool,
    /// Link the EMV crossed onto.
    pub emv_crossed: Option<LinkId>,
    pub emv_finished: bool,
    /// Intersections that changed phase.
    pub phase_switches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmvTime {
    pub seconds: f64,
    /// `false` when the EMV had not arrived by the end of the episode; `seconds` is
    /// then a lower bound.
    pub finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub t_emv: Option<EmvTime>,
    /// Mean non-EMV trip time; unfinished trips count up to the episode end.
    pub t_avg: Option<f64>,
    pub completed: usize,
    pub unfinished: usize,
}

/// Read access to lane occupancies, implemented by the simulator and by test fixtures.
pub trait LaneCounts {
    fn count(&self, lane: LaneId) -> usize;
}

impl LaneCounts for [usize] {
    fn count(&self, lane: LaneId) -> usize {
        self[lane.0]
    }
}

impl LaneCounts for Vec<usize> {
    fn count(&self, lane: LaneId) -> usize {
        self[lane.0]
    }
}

#[derive(Debug, Clone)]
pub struct SimState {
    map: Arc<TrafficMap>,
    config: SimConfig,
    demand: Option<DemandConfig>,
    clock: f64,
    lanes: Vec<LaneState>,
    lane_fd: Vec<FundamentalDiagram<f64>>,
    active_phase: Vec<usize>,
    phase_age: Vec<f64>,
    last_switch: Vec<Option<f64>>,
    emv: Option<EmvStatus>,
    emv_prev_link: Option<LinkId>,
    pending: Vec<VecDeque<Vehicle>>,
    trips: Vec<TripRecord>,
    counters: Counters,
    next_id: u64,
    demand_rng: ChaCha8Rng,
    pull_rng: ChaCha8Rng,
    origins: Vec<LinkId>,
    spawned: Vec<u64>,
    /// Free-flow next hop towards each intersection, indexed [dest][node].
    free_flow_next: Vec<Vec<Option<NodeId>>>,
}

impl SimState {
    pub fn new(
        map: Arc<TrafficMap>,
        config: SimConfig,
        demand: Option<DemandConfig>,
        seed: u64,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let lanes: Vec<LaneState> = map
            .lanes()
            .iter()
            .map(|l| LaneState {
                lane: l.id,
                vehicles: Vec::new(),
                shoulder: Vec::new(),
                capacity: map.lane_capacity(l.id),
            })
            .collect();
        let lane_fd = lanes
            .iter()
            .map(|l| {
                FundamentalDiagram::for_capacity(l.capacity, config.critical_ratio, config.free_speed, config.min_speed)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let n = map.intersection_count();
        let free_field = TravelTimeField::free_flow(&map, config.free_speed);
        let free_flow_next = map
            .intersections()
            .map(|d| {
                route::prepopulate(&map, &free_field, d)
                    .expect("free-flow field is valid")
                    .next_table()
                    .to_vec()
            })
            .collect();
        let origins = demand
            .as_ref()
            .map(|d| origin_links(&map, d.pattern))
            .unwrap_or_default();
        let demand_seed = demand.as_ref().map_or(seed, |d| d.seed);
        let mut demand_rng = ChaCha8Rng::seed_from_u64(demand_seed);
        demand_rng.set_stream(1);
        let mut pull_rng = ChaCha8Rng::seed_from_u64(seed);
        pull_rng.set_stream(2);
        Ok(SimState {
            pending: vec![VecDeque::new(); lanes.len()],
            spawned: vec![0; lanes.len()],
            lanes,
            lane_fd,
            active_phase: vec![0; n],
            phase_age: vec![config.min_dwell; n],
            last_switch: vec![None; n],
            emv: None,
            emv_prev_link: None,
            trips: Vec::new(),
            counters: Counters::default(),
            next_id: 0,
            demand_rng,
            pull_rng,
            origins,
            free_flow_next,
            clock: 0.0,
            demand,
            config,
            map,
        })
    }

    pub fn map(&self) -> &Arc<TrafficMap> {
        &self.map
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn lane(&self, lane: LaneId) -> &LaneState {
        &self.lanes[lane.0]
    }

    pub fn lanes(&self) -> &[LaneState] {
        &self.lanes
    }

    pub fn active_phase(&self, node: NodeId) -> usize {
        self.active_phase[node.0]
    }

    pub fn phase_age(&self, node: NodeId) -> f64 {
        self.phase_age[node.0]
    }

    pub fn emv(&self) -> Option<&EmvStatus> {
        self.emv.as_ref()
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn trips(&self) -> &[TripRecord] {
        &self.trips
    }

    pub fn pending_count(&self) -> usize {
        self.pending.iter().map(VecDeque::len).sum()
    }

    /// Vehicles on lanes, shoulders included.
    pub fn in_network(&self) -> usize {
        self.lanes.iter().map(LaneState::count).sum()
    }

    /// Vehicles on all lanes of a link.
    pub fn link_count(&self, link: LinkId) -> usize {
        self.map.link(link).lanes.iter().map(|&l| self.lanes[l.0].count()).sum()
    }

    pub fn emv_location(&self) -> Option<EmvLocation> {
        let status = self.emv.as_ref()?;
        let lane = status.lane?;
        let v = self.lanes[lane.0].vehicles.iter().find(|v| v.is_emv())?;
        Some(EmvLocation {
            lane,
            link: self.map.lane(lane).link,
            position: v.position,
        })
    }

    /// Sets the demand configuration; takes effect from the next substep.
    pub fn set_demand(&mut self, demand: Option<DemandConfig>) {
        self.origins = demand
            .as_ref()
            .map(|d| origin_links(&self.map, d.pattern))
            .unwrap_or_default();
        self.demand = demand;
    }

    /// Inserts the EMV at the origin's entry (a source stub when it has one, otherwise
    /// its lowest-id incoming link) at the current clock.
    pub fn dispatch_emv(&mut self, origin: NodeId, dest: NodeId) -> Result<VehicleId, SimError> {
        for n in [origin, dest] {
            if !self.map.is_intersection(n) {
                return Err(SimError::NotIntersection(n.0));
            }
        }
        if origin == dest {
            return Err(SimError::DegenerateEmvTrip(origin.0));
        }
        if self.emv.is_some() {
            return Err(SimError::EmvAlreadyActive);
        }
        let incoming = self.map.incoming(origin);
        let link = incoming
            .iter()
            .copied()
            .find(|&l| self.map.link(l).kind == LinkKind::Source)
            .unwrap_or(incoming[0]);
        let lane = self.least_loaded_lane(link, |_| true).expect("link has lanes");
        let id = self.fresh_id();
        let emv = Vehicle {
            id,
            kind: VehicleKind::Emv,
            route: vec![link],
            cursor: 0,
            position: 0.0,
            spawn_time: self.clock,
            finish_time: None,
            pulled_over: false,
            home_lane: None,
        };
        self.pending[lane.0].push_front(emv);
        self.counters.generated += 1;
        self.emv = Some(EmvStatus {
            id,
            origin,
            dest,
            spawn_time: self.clock,
            finish_time: None,
            lane: None,
        });
        Ok(id)
    }

    fn fresh_id(&mut self) -> VehicleId {
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        id
    }

    fn least_loaded_lane(&self, link: LinkId, open: impl Fn(&LaneState) -> bool) -> Option<LaneId> {
        let mut best: Option<(usize, LaneId)> = None;
        for &l in &self.map.link(link).lanes {
            let s = &self.lanes[l.0];
            if !open(s) {
                continue;
            }
            let spare = s.capacity.saturating_sub(s.count());
            if best.is_none_or(|(b, _)| spare > b) {
                best = Some((spare, l));
            }
        }
        best.map(|(_, l)| l)
    }

    /// Free-flow shortest route from a source link to a sink link.
    pub fn free_flow_route(&self, source: LinkId, sink: LinkId) -> Option<Vec<LinkId>> {
        let start = self.map.link(source).to;
        let goal = self.map.link(sink).from;
        let next = &self.free_flow_next[goal.0];
        let mut route = vec![source];
        let mut node = start;
        while node != goal {
            let hop = next[node.0]?;
            route.push(self.map.link_between(node, hop)?);
            node = hop;
        }
        route.push(sink);
        Some(route)
    }

    /// Draws this substep's Poisson arrivals on every origin lane and queues them.
    pub fn spawn_demand(&mut self) {
        let Some(demand) = self.demand.as_ref() else {
            return;
        };
        let rate = demand.rate_at(self.clock);
        if rate <= 0.0 {
            return;
        }
        let mean = rate / 3600.0 * self.config.substep;
        let poisson = Poisson::new(mean).expect("positive Poisson mean");
        let pattern = demand.pattern;
        for oi in 0..self.origins.len() {
            let source = self.origins[oi];
            let sinks = destination_links(&self.map, pattern, source);
            if sinks.is_empty() {
                continue;
            }
            for li in 0..self.map.link(source).lanes.len() {
                let lane = self.map.link(source).lanes[li];
                let k = poisson.sample(&mut self.demand_rng) as u64;
                for _ in 0..k {
                    let sink = sinks[self.demand_rng.random_range(0..sinks.len())];
                    let Some(route) = self.free_flow_route(source, sink) else {
                        continue;
                    };
                    let id = self.fresh_id();
                    self.pending[lane.0].push_back(Vehicle {
                        id,
                        kind: VehicleKind::Regular,
                        route,
                        cursor: 0,
                        position: 0.0,
                        spawn_time: self.clock,
                        finish_time: None,
                        pulled_over: false,
                        home_lane: None,
                    });
                    self.counters.generated += 1;
                    self.spawned[lane.0] += 1;
                }
            }
        }
    }

    /// Demand vehicles generated on a lane so far.
    pub fn spawned_on(&self, lane: LaneId) -> u64 {
        self.spawned[lane.0]
    }

    /// Queues a regular vehicle on the least-loaded lane of `route[0]`. The route must
    /// be a chain of links ending in a sink.
    pub fn insert_vehicle(&mut self, route: Vec<LinkId>) -> Result<VehicleId, SimError> {
        let chained = route
            .windows(2)
            .all(|w| self.map.link(w[0]).to == self.map.link(w[1]).from);
        let ends = route.last().is_some_and(|l| self.map.link(*l).kind == LinkKind::Sink);
        if !chained || !ends || route.len() < 2 {
            return Err(SimError::InvalidDemand(format!(
                "route {route:?} is not a path to a sink"
            )));
        }
        let lane = self.map.link(route[0]).lanes.iter().copied().max_by_key(|l| {
            let s = &self.lanes[l.0];
            let queued = s.count() + self.pending[l.0].len();
            (s.capacity as i64 - queued as i64, std::cmp::Reverse(l.0))
        });
        let lane = lane.expect("link has lanes");
        let id = self.fresh_id();
        self.pending[lane.0].push_back(Vehicle {
            id,
            kind: VehicleKind::Regular,
            route,
            cursor: 0,
            position: 0.0,
            spawn_time: self.clock,
            finish_time: None,
            pulled_over: false,
            home_lane: None,
        });
        self.counters.generated += 1;
        Ok(id)
    }

    /// Advances one substep. `commands[i]` is the action slot (0..8) requested at
    /// intersection `i`.
    pub fn step(&mut self, commands: &[usize], guide: &dyn EmvGuide) -> Result<SubstepEvents, SimError> {
        let n = self.map.intersection_count();
        if commands.len() != n {
            return Err(SimError::PhaseCount {
                expected: n,
                got: commands.len(),
            });
        }
        if let Some((node, &slot)) = commands.iter().enumerate().find(|(_, &s)| s >= PHASE_SLOTS) {
            return Err(SimError::BadPhase { node, slot });
        }
        let mut events = SubstepEvents {
            phase_switches: self.switch_phases(commands),
            ..Default::default()
        };
        self.spawn_demand();
        events.emv_entered = self.admit_pending();
        self.pull_over();
        self.advance_vehicles()?;
        self.cross_intersections(guide, &mut events);
        self.release_pulled_over();
        self.emv_prev_link = self.emv_location().map(|e| e.link);
        self.clock += self.config.substep;
        for age in &mut self.phase_age {
            *age += self.config.substep;
        }
        Ok(events)
    }

    fn switch_phases(&mut self, commands: &[usize]) -> usize {
        let mut switches = 0;
        for (i, &slot) in commands.iter().enumerate() {
            let Some(wanted) = self.map.phase_table(NodeId(i)).resolve(slot) else {
                continue;
            };
            if wanted != self.active_phase[i] && self.phase_age[i] >= self.config.min_dwell {
                debug_assert!(self.last_switch[i].is_none_or(|t| self.clock - t >= self.config.min_dwell - 1e-9));
                self.active_phase[i] = wanted;
                self.phase_age[i] = 0.0;
                self.last_switch[i] = Some(self.clock);
                switches += 1;
            }
        }
        switches
    }

    fn admit_pending(&mut self) -> bool {
        let mut emv_entered = false;
        let headway = self.config.headway;
        for li in 0..self.pending.len() {
            if self.pending[li].is_empty() || !self.lanes[li].entry_open(headway) {
                continue;
            }
            let mut v = self.pending[li].pop_front().expect("non-empty");
            v.position = 0.0;
            if v.is_emv() {
                if let Some(e) = self.emv.as_mut() {
                    e.lane = Some(LaneId(li));
                }
                emv_entered = true;
            }
            self.lanes[li].vehicles.push(v);
            self.counters.entered += 1;
        }
        emv_entered
    }

    fn pull_over(&mut self) {
        let Some(loc) = self.emv_location() else {
            return;
        };
        if self.config.pull_over_prob <= 0.0 {
            return;
        }
        let link = self.map.link(loc.link);
        if link.lane_count() < 2 {
            return;
        }
        let idx = self.map.lane(loc.lane).index;
        let neighbours: Vec<LaneId> = link
            .lanes
            .iter()
            .copied()
            .filter(|l| self.map.lane(*l).index.abs_diff(idx) == 1)
            .collect();
        let mut i = 0;
        while i < self.lanes[loc.lane.0].vehicles.len() {
            let v = &self.lanes[loc.lane.0].vehicles[i];
            if v.is_emv() {
                break;
            }
            let draw: f64 = self.pull_rng.random();
            if draw >= self.config.pull_over_prob {
                i += 1;
                continue;
            }
            let target = neighbours
                .iter()
                .copied()
                .filter(|l| self.lanes[l.0].count() < self.lanes[l.0].capacity)
                .max_by_key(|l| {
                    let s = &self.lanes[l.0];
                    (s.capacity - s.count(), std::cmp::Reverse(l.0))
                });
            let Some(target) = target else {
                i += 1;
                continue;
            };
            let mut v = self.lanes[loc.lane.0].vehicles.remove(i);
            v.pulled_over = true;
            v.home_lane = Some(loc.lane);
            let shoulder = &mut self.lanes[target.0].shoulder;
            let at = shoulder.partition_point(|s| s.position > v.position);
            shoulder.insert(at, v);
        }
    }

    fn advance_vehicles(&mut self) -> Result<(), SimError> {
        let dt = self.config.substep;
        let headway = self.config.headway;
        for li in 0..self.lanes.len() {
            if self.lanes[li].vehicles.is_empty() {
                continue;
            }
            let length = self.map.lane_link(LaneId(li)).length;
            let n = self.lanes[li].count() as f64;
            let v_lane = lane_speed(n, &self.lane_fd[li])?;
            let mut leader: Option<f64> = None;
            for (ahead, v) in self.lanes[li].vehicles.iter_mut().enumerate() {
                let speed = if v.is_emv() {
                    emv_speed(ahead as f64, self.config.emv_free_speed, self.config.free_speed)
                } else {
                    v_lane
                };
                let mut cap = length;
                if let Some(lp) = leader {
                    cap = cap.min(lp - headway);
                }
                let next = (v.position + speed * dt).min(cap);
                if next > v.position {
                    v.position = next;
                }
                leader = Some(v.position);
            }
        }
        Ok(())
    }

    fn cross_intersections(&mut self, guide: &dyn EmvGuide, events: &mut SubstepEvents) {
        let finish = self.clock + self.config.substep;
        let headway = self.config.headway;
        let map = Arc::clone(&self.map);
        for node in map.intersections() {
            let table = map.phase_table(node);
            let phase = self.active_phase[node.0];
            for &lin in map.incoming(node) {
                let link = map.link(lin);
                for &lane in &link.lanes {
                    let Some(front) = self.lanes[lane.0].vehicles.first() else {
                        continue;
                    };
                    if front.position < link.length - AT_STOP_LINE {
                        continue;
                    }
                    let emv_dest = self.emv.as_ref().map(|e| e.dest);
                    if front.is_emv() && emv_dest == Some(node) {
                        let mut v = self.lanes[lane.0].vehicles.remove(0);
                        v.finish_time = Some(finish);
                        self.complete(v, finish);
                        events.emv_finished = true;
                        continue;
                    }
                    let next = if front.is_emv() {
                        guide.next_link(&map, node, lin)
                    } else {
                        front.route.get(front.cursor + 1).copied()
                    };
                    let Some(next) = next else { continue };
                    if !table.permits(phase, lin, next) {
                        continue;
                    }
                    let to = map.link(next);
                    if to.kind == LinkKind::Sink {
                        let mut v = self.lanes[lane.0].vehicles.remove(0);
                        if v.is_emv() {
                            v.route.push(next);
                            events.emv_finished = true;
                        }
                        v.finish_time = Some(finish);
                        self.complete(v, finish);
                        continue;
                    }
                    let Some(target) = self.least_loaded_lane(next, |s| s.entry_open(headway)) else {
                        continue;
                    };
                    let mut v = self.lanes[lane.0].vehicles.remove(0);
                    if v.is_emv() {
                        v.route.push(next);
                        if let Some(e) = self.emv.as_mut() {
                            e.lane = Some(target);
                        }
                        events.emv_crossed = Some(next);
                    }
                    v.cursor += 1;
                    v.position = 0.0;
                    self.lanes[target.0].vehicles.push(v);
                }
            }
        }
    }

    fn complete(&mut self, v: Vehicle, finish: f64) {
        if v.is_emv() {
            if let Some(e) = self.emv.as_mut() {
                e.finish_time = Some(finish);
                e.lane = None;
            }
        }
        self.trips.push(TripRecord {
            id: v.id,
            kind: v.kind,
            spawn_time: v.spawn_time,
            finish_time: finish,
        });
        self.counters.completed += 1;
    }

    /// Pulled-over vehicles rejoin traffic one substep after the EMV has left their
    /// link: at their own position where a headway gap exists, otherwise at the back
    /// of the home lane (or of the lane they wait in).
    fn release_pulled_over(&mut self) {
        let emv_link = self.emv_location().map(|e| e.link);
        let headway = self.config.headway;
        for li in 0..self.lanes.len() {
            if self.lanes[li].shoulder.is_empty() {
                continue;
            }
            let link = self.map.lane(LaneId(li)).link;
            if emv_link == Some(link) || self.emv_prev_link == Some(link) {
                continue;
            }
            let mut k = 0;
            while k < self.lanes[li].shoulder.len() {
                let home = self.lanes[li].shoulder[k].home_lane.unwrap_or(LaneId(li));
                let p = self.lanes[li].shoulder[k].position;
                let mut merged = false;
                for target in [home, LaneId(li)] {
                    let t = &self.lanes[target.0];
                    let extra = usize::from(target.0 != li);
                    if t.count() + extra > t.capacity {
                        continue;
                    }
                    let at = t.vehicles.partition_point(|v| v.position > p);
                    let gap_ahead = at == 0 || t.vehicles[at - 1].position - p >= headway;
                    let gap_behind = at == t.vehicles.len() || p - t.vehicles[at].position >= headway;
                    // Without a gap alongside, fall in behind the lane's last vehicle.
                    let slot = if gap_ahead && gap_behind {
                        Some((at, p))
                    } else {
                        let back = t.vehicles.last().map_or(f64::INFINITY, |v| v.position);
                        (back - headway >= 0.0).then(|| (t.vehicles.len(), p.min(back - headway)))
                    };
                    if let Some((at, pos)) = slot {
                        let mut v = self.lanes[li].shoulder.remove(k);
                        v.pulled_over = false;
                        v.home_lane = None;
                        v.position = pos;
                        self.lanes[target.0].vehicles.insert(at, v);
                        merged = true;
                        break;
                    }
                }
                if !merged {
                    k += 1;
                }
            }
        }
    }

    /// Trip-time metrics at the current clock (treated as the episode end).
    pub fn metrics(&self) -> Metrics {
        let end = self.clock;
        let t_emv = self.emv.as_ref().map(|e| match e.finish_time {
            Some(f) => EmvTime {
                seconds: f - e.spawn_time,
                finished: true,
            },
            None => EmvTime {
                seconds: end - e.spawn_time,
                finished: false,
            },
        });
        let mut sum = 0.0;
        let mut completed = 0usize;
        for t in self.trips.iter().filter(|t| t.kind == VehicleKind::Regular) {
            sum += t.finish_time - t.spawn_time;
            completed += 1;
        }
        let mut unfinished = 0usize;
        let open = self
            .lanes
            .iter()
            .flat_map(|l| l.vehicles.iter().chain(l.shoulder.iter()))
            .chain(self.pending.iter().flatten())
            .filter(|v| !v.is_emv());
        for v in open {
            sum += end - v.spawn_time;
            unfinished += 1;
        }
        let total = completed + unfinished;
        Metrics {
            t_emv,
            t_avg: (total > 0).then(|| sum / total as f64),
            completed,
            unfinished,
        }
    }

    /// Checks conservation, capacity, ordering and spacing. Returns a description of
    /// the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let c = self.counters;
        let pending = self.pending_count() as u64;
        let net = self.in_network() as u64;
        if c.generated != pending + net + c.completed {
            return Err(format!(
                "conservation: generated {} != pending {} + network {} + completed {}",
                c.generated, pending, net, c.completed
            ));
        }
        if c.entered != net + c.completed {
            return Err(format!(
                "conservation: entered {} != network {} + completed {}",
                c.entered, net, c.completed
            ));
        }
        let mut emvs = 0;
        for (li, l) in self.lanes.iter().enumerate() {
            if l.count() > l.capacity {
                return Err(format!("lane {li} holds {} > {}", l.count(), l.capacity));
            }
            let length = self.map.lane_link(LaneId(li)).length;
            for w in l.vehicles.windows(2) {
                if w[0].position - w[1].position < self.config.headway - 1e-9 {
                    return Err(format!(
                        "lane {li}: spacing {} below headway",
                        w[0].position - w[1].position
                    ));
                }
            }
            for v in l.vehicles.iter().chain(l.shoulder.iter()) {
                if !(0.0..=length + 1e-9).contains(&v.position) {
                    return Err(format!("lane {li}: position {} out of range", v.position));
                }
                if v.is_emv() {
                    emvs += 1;
                }
            }
        }
        emvs += self.pending.iter().flatten().filter(|v| v.is_emv()).count();
        if emvs > 1 {
            return Err(format!("{emvs} EMVs present"));
        }
        Ok(())
    }

    /// Current lane counts, indexed by lane id.
    pub fn counts(&self) -> Vec<usize> {
        self.lanes.iter().map(LaneState::count).collect()
    }

    /// Compact per-step dump for debugging.
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            clock: self.clock,
            counts: self.counts(),
            phases: self.active_phase.clone(),
            emv: self.emv_location().map(|e| (e.link.0, e.position)),
            pending: self.pending_count(),
        }
    }
}

impl LaneCounts for SimState {
    fn count(&self, lane: LaneId) -> usize {
        self.lanes[lane.0].count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub clock: f64,
    pub counts: Vec<usize>,
    pub phases: Vec<usize>,
    pub emv: Option<(usize, f64)>,
    pub pending: usize,
}

impl RoutingState<f64> {
    /// Guide view: the EMV leaves `node` towards `Next[node]`.
    pub fn next_link_from(&self, map: &TrafficMap, node: NodeId) -> Option<LinkId> {
        let hop = *self.next_table().get(node.0)?;
        map.link_between(node, hop?)
    }
}
