//! EMV routing over intersections.
//!
//! Tables are indexed by intersection id. All searches use internal links only; stub
//! links never appear on a route between intersections.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::RouteError;
use crate::network::{LinkId, NodeId, TrafficMap};
use crate::sim::{emv_speed, SimState};

/// Fraction of a link's per-lane vehicles predicted to stay in front of the EMV.
pub const REMAIN_FRACTION: f64 = 0.5;

/// Estimated EMV traversal time per link, seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeField<F> {
    times: Vec<F>,
}

impl<F: Float> TravelTimeField<F> {
    /// Checks sizes and that every internal link has a positive, finite time.
    pub fn new(map: &TrafficMap, times: Vec<F>) -> Result<Self, RouteError> {
        if times.len() != map.links().len() {
            return Err(RouteError::FieldSize {
                expected: map.links().len(),
                got: times.len(),
            });
        }
        for link in map.links().iter().filter(|l| l.is_internal()) {
            let t = times[link.id.0];
            if !(t > F::zero() && t.is_finite()) {
                return Err(RouteError::BadTravelTime {
                    link: link.id.0,
                    value: t.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(TravelTimeField { times })
    }

    /// length / speed on every link.
    pub fn free_flow(map: &TrafficMap, speed: F) -> Self {
        TravelTimeField {
            times: map.links().iter().map(|l| F::from(l.length).unwrap() / speed).collect(),
        }
    }

    pub fn get(&self, link: LinkId) -> F {
        self.times[link.0]
    }

    pub fn set(&mut self, link: LinkId, t: F) {
        self.times[link.0] = t;
    }

    pub fn as_slice(&self) -> &[F] {
        &self.times
    }

    /// Smallest internal-link time (the A* heuristic scale).
    pub fn min_internal(&self, map: &TrafficMap) -> F {
        map.links()
            .iter()
            .filter(|l| l.is_internal())
            .map(|l| self.times[l.id.0])
            .fold(F::infinity(), F::min)
    }
}

/// ETA / Next tables towards one destination intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingState<F> {
    dest: NodeId,
    eta: Vec<F>,
    next: Vec<Option<NodeId>>,
    /// Clock of the last update, seconds.
    pub updated_at: f64,
}

impl<F: Float> RoutingState<F> {
    /// Table with ETA = +inf everywhere except the destination.
    pub fn unvisited(map: &TrafficMap, dest: NodeId) -> Result<Self, RouteError> {
        check_node(map, dest)?;
        let n = map.intersection_count();
        let mut eta = vec![F::infinity(); n];
        let mut next = vec![None; n];
        eta[dest.0] = F::zero();
        next[dest.0] = Some(dest);
        Ok(RoutingState {
            dest,
            eta,
            next,
            updated_at: 0.0,
        })
    }

    pub fn dest(&self) -> NodeId {
        self.dest
    }

    pub fn eta(&self, node: NodeId) -> F {
        self.eta[node.0]
    }

    pub fn next(&self, node: NodeId) -> Option<NodeId> {
        self.next[node.0]
    }

    pub fn eta_table(&self) -> &[F] {
        &self.eta
    }

    pub fn next_table(&self) -> &[Option<NodeId>] {
        &self.next
    }

    /// Nodes that cannot reach the destination.
    pub fn unreachable(&self) -> Vec<NodeId> {
        (0..self.eta.len())
            .filter(|&i| !self.eta[i].is_finite())
            .map(NodeId)
            .collect()
    }
}

fn check_node(map: &TrafficMap, node: NodeId) -> Result<(), RouteError> {
    if map.is_intersection(node) {
        Ok(())
    } else {
        Err(RouteError::UnknownNode(node))
    }
}

fn check_field<F: Float>(map: &TrafficMap, field: &TravelTimeField<F>) -> Result<(), RouteError> {
    TravelTimeField::new(map, field.times.clone()).map(|_| ())
}

/// Best (ETA_j + T[i->j]) over the internal successors of `i`; ties go to the lower
/// node id.
fn best_successor<F: Float>(
    map: &TrafficMap,
    field: &TravelTimeField<F>,
    eta: &[F],
    i: NodeId,
    exclude: Option<NodeId>,
) -> Option<(F, NodeId)> {
    let mut best: Option<(F, NodeId)> = None;
    for (link, j) in map.internal_successors(i) {
        if Some(j) == exclude || !eta[j.0].is_finite() {
            continue;
        }
        let cand = eta[j.0] + field.get(link);
        let better = match best {
            None => true,
            Some((b, bj)) => cand < b || (cand == b && j < bj),
        };
        if better {
            best = Some((cand, j));
        }
    }
    best
}

/// Static shortest times to `dest` (reverse Dijkstra) with first hops.
pub fn prepopulate<F: Float>(
    map: &TrafficMap,
    field: &TravelTimeField<F>,
    dest: NodeId,
) -> Result<RoutingState<F>, RouteError> {
    check_field(map, field)?;
    let mut rs: RoutingState<F> = RoutingState::unvisited(map, dest)?;
    let n = map.intersection_count();
    let mut done = vec![false; n];
    // Predecessors over internal links.
    let mut preds: Vec<Vec<(LinkId, NodeId)>> = vec![Vec::new(); n];
    for i in map.intersections() {
        for (link, j) in map.internal_successors(i) {
            preds[j.0].push((link, i));
        }
    }
    loop {
        let mut pick: Option<usize> = None;
        for v in 0..n {
            if !done[v] && rs.eta[v].is_finite() && pick.is_none_or(|p| rs.eta[v] < rs.eta[p]) {
                pick = Some(v);
            }
        }
        let Some(u) = pick else { break };
        done[u] = true;
        for &(link, i) in &preds[u] {
            if done[i.0] {
                continue;
            }
            let cand = rs.eta[u] + field.get(link);
            if cand < rs.eta[i.0] {
                rs.eta[i.0] = cand;
            }
        }
    }
    for i in map.intersections() {
        if i != dest {
            rs.next[i.0] = best_successor(map, field, &rs.eta, i, None).map(|(_, j)| j);
        }
    }
    Ok(rs)
}

/// One simultaneous Bellman update of every non-destination node from the old table.
pub fn relax_step<F: Float>(rs: &RoutingState<F>, map: &TrafficMap, field: &TravelTimeField<F>) -> RoutingState<F> {
    let mut out = rs.clone();
    for i in map.intersections() {
        if i == rs.dest {
            continue;
        }
        match best_successor(map, field, &rs.eta, i, None) {
            Some((eta, j)) => {
                out.eta[i.0] = eta;
                out.next[i.0] = Some(j);
            }
            None => {
                out.eta[i.0] = F::infinity();
                out.next[i.0] = None;
            }
        }
    }
    debug_assert!(bellman_residual_ok(&out, rs, map, field));
    out
}

/// Checks ETA'_i = min_j(T[i->j] + ETA_j) for every non-destination node.
pub fn bellman_residual_ok<F: Float>(
    new: &RoutingState<F>,
    old: &RoutingState<F>,
    map: &TrafficMap,
    field: &TravelTimeField<F>,
) -> bool {
    map.intersections().filter(|&i| i != old.dest).all(|i| {
        let m = map
            .internal_successors(i)
            .map(|(l, j)| field.get(l) + old.eta[j.0])
            .fold(F::infinity(), F::min);
        new.eta[i.0] == m
    })
}

/// Per-link EMV travel-time estimate from the current lane counts.
pub fn estimate_travel_times(state: &SimState, remain: f64) -> TravelTimeField<f64> {
    let map = state.map();
    let cfg = state.config();
    let times = map
        .links()
        .iter()
        .map(|l| {
            if !l.is_internal() {
                return l.length / cfg.emv_free_speed;
            }
            let x = state.link_count(l.id) as f64;
            let k = (remain * x / l.lane_count() as f64).ceil();
            l.length / emv_speed(k, cfg.emv_free_speed, cfg.free_speed)
        })
        .collect();
    TravelTimeField { times }
}

/// The EMV's next intersection from `node`. Arriving on `arriving`, a U-turn back to
/// its tail is never permitted by any phase, so in that case the best other successor
/// under (field, ETA) is used instead.
pub fn next_hop_for_emv<F: Float>(
    rs: &RoutingState<F>,
    map: &TrafficMap,
    field: &TravelTimeField<F>,
    node: NodeId,
    arriving: Option<LinkId>,
) -> Result<NodeId, RouteError> {
    if node == rs.dest {
        return Ok(node);
    }
    let unreachable = RouteError::Unreachable {
        from: node,
        dest: rs.dest,
    };
    let next = rs.next.get(node.0).copied().flatten().ok_or(unreachable.clone())?;
    let back = arriving
        .map(|l| map.link(l))
        .filter(|l| l.is_internal())
        .map(|l| l.from);
    if back != Some(next) {
        return Ok(next);
    }
    best_successor(map, field, &rs.eta, node, back)
        .map(|(_, j)| j)
        .ok_or(unreachable)
}

/// Time-optimal node path from `origin` to `dest` under a frozen field, optionally
/// forbidding `avoid` as the first hop.
pub fn astar<F: Float>(
    map: &TrafficMap,
    field: &TravelTimeField<F>,
    origin: NodeId,
    dest: NodeId,
) -> Result<Vec<NodeId>, RouteError> {
    astar_avoiding(map, field, origin, dest, None)
}

pub fn astar_avoiding<F: Float>(
    map: &TrafficMap,
    field: &TravelTimeField<F>,
    origin: NodeId,
    dest: NodeId,
    avoid_first: Option<NodeId>,
) -> Result<Vec<NodeId>, RouteError> {
    check_node(map, origin)?;
    check_node(map, dest)?;
    check_field(map, field)?;
    if origin == dest {
        return Ok(vec![origin]);
    }
    let n = map.intersection_count();
    let scale = field.min_internal(map);
    let h = |v: NodeId| F::from(map.grid_distance(v, dest)).unwrap() * scale;
    let mut g = vec![F::infinity(); n];
    let mut parent: Vec<Option<NodeId>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut open = vec![false; n];
    g[origin.0] = F::zero();
    open[origin.0] = true;
    loop {
        let mut pick: Option<(F, usize)> = None;
        for v in 0..n {
            if open[v] {
                let f = g[v] + h(NodeId(v));
                if pick.is_none_or(|(pf, _)| f < pf) {
                    pick = Some((f, v));
                }
            }
        }
        let Some((_, u)) = pick else {
            return Err(RouteError::Unreachable { from: origin, dest });
        };
        if u == dest.0 {
            break;
        }
        open[u] = false;
        closed[u] = true;
        for (link, j) in map.internal_successors(NodeId(u)) {
            if closed[j.0] || (u == origin.0 && Some(j) == avoid_first) {
                continue;
            }
            let cand = g[u] + field.get(link);
            if cand < g[j.0] {
                g[j.0] = cand;
                parent[j.0] = Some(NodeId(u));
                open[j.0] = true;
            }
        }
    }
    let mut path = vec![dest];
    let mut cur = dest;
    while let Some(p) = parent[cur.0] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    Ok(path)
}

/// Sum of link times along a node path.
pub fn path_cost<F: Float>(map: &TrafficMap, field: &TravelTimeField<F>, path: &[NodeId]) -> Option<F> {
    let mut total = F::zero();
    for w in path.windows(2) {
        total = total + field.get(map.link_between(w[0], w[1])?);
    }
    Some(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_grid, build_manhattan};
    use crate::sim::{SimConfig, SimState};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_field(map: &TrafficMap, rng: &mut ChaCha8Rng) -> TravelTimeField<f64> {
        // Half-second steps keep path sums exact.
        let times = map
            .links()
            .iter()
            .map(|_| rng.random_range(2..80) as f64 * 0.5)
            .collect();
        TravelTimeField::new(map, times).unwrap()
    }

    /// Minimum cost over every simple path, by exhaustive search.
    fn brute_force(map: &TrafficMap, field: &TravelTimeField<f64>, from: NodeId, dest: NodeId) -> f64 {
        fn go(
            map: &TrafficMap,
            field: &TravelTimeField<f64>,
            at: NodeId,
            dest: NodeId,
            seen: &mut Vec<bool>,
            cost: f64,
            best: &mut f64,
        ) {
            if at == dest {
                *best = best.min(cost);
                return;
            }
            for (l, j) in map.internal_successors(at) {
                if !seen[j.0] {
                    seen[j.0] = true;
                    go(map, field, j, dest, seen, cost + field.get(l), best);
                    seen[j.0] = false;
                }
            }
        }
        let mut seen = vec![false; map.intersection_count()];
        seen[from.0] = true;
        let mut best = f64::INFINITY;
        go(map, field, from, dest, &mut seen, 0.0, &mut best);
        best
    }

    #[test]
    fn destination_base_case() {
        let map = build_grid(3, 3, 2, 200.0, true).unwrap();
        let f = TravelTimeField::free_flow(&map, 12.0);
        let rs = prepopulate(&map, &f, NodeId(4)).unwrap();
        assert_eq!(rs.eta(NodeId(4)), 0.0);
        assert_eq!(rs.next(NodeId(4)), Some(NodeId(4)));
    }

    #[test]
    fn single_edge_map() {
        let map = build_grid(1, 2, 1, 200.0, true).unwrap();
        let times = map.links().iter().map(|_| 10.0).collect();
        let f = TravelTimeField::new(&map, times).unwrap();
        let rs = prepopulate(&map, &f, NodeId(1)).unwrap();
        assert_eq!(rs.eta(NodeId(0)), 10.0);
        assert_eq!(rs.next(NodeId(0)), Some(NodeId(1)));
    }

    #[test]
    fn uniform_grid_eta_is_hop_distance() {
        let map = build_grid(5, 5, 2, 200.0, true).unwrap();
        let f = TravelTimeField::new(&map, vec![33.0; map.links().len()]).unwrap();
        for d in map.intersections() {
            let rs = prepopulate(&map, &f, d).unwrap();
            for i in map.intersections() {
                assert_eq!(rs.eta(i), 33.0 * map.grid_distance(i, d) as f64);
            }
        }
    }

    #[test]
    fn prepopulate_matches_brute_force_on_3x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let map = build_grid(3, 3, 2, 200.0, true).unwrap();
        for _ in 0..10 {
            let f = random_field(&map, &mut rng);
            let d = NodeId(rng.random_range(0..9));
            let rs = prepopulate(&map, &f, d).unwrap();
            for i in map.intersections() {
                assert_eq!(rs.eta(i), brute_force(&map, &f, i, d));
            }
        }
    }

    #[test]
    fn unknown_destination_and_bad_field() {
        let map = build_grid(2, 2, 2, 200.0, true).unwrap();
        let f = TravelTimeField::free_flow(&map, 12.0);
        assert_eq!(
            prepopulate(&map, &f, NodeId(4)).unwrap_err(),
            RouteError::UnknownNode(NodeId(4))
        );
        assert!(TravelTimeField::new(&map, vec![1.0; 3]).is_err());
        let mut times = vec![1.0; map.links().len()];
        let internal = map.links().iter().find(|l| l.is_internal()).unwrap().id;
        times[internal.0] = 0.0;
        assert!(TravelTimeField::new(&map, times).is_err());
    }

    #[test]
    fn relax_is_fixed_point_of_prepopulate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = build_manhattan(6, 3).unwrap();
        for _ in 0..10 {
            let f = random_field(&map, &mut rng);
            let d = NodeId(rng.random_range(0..map.intersection_count()));
            let rs = prepopulate(&map, &f, d).unwrap();
            let r2 = relax_step(&rs, &map, &f);
            assert_eq!(rs.eta_table(), r2.eta_table());
            assert_eq!(rs.next_table(), r2.next_table());
        }
    }

    #[test]
    fn relax_from_unvisited_converges_within_node_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = build_grid(4, 4, 2, 200.0, true).unwrap();
        let f = random_field(&map, &mut rng);
        let d = NodeId(15);
        let mut rs = RoutingState::unvisited(&map, d).unwrap();
        for _ in 0..map.intersection_count() {
            rs = relax_step(&rs, &map, &f);
        }
        let fresh = prepopulate(&map, &f, d).unwrap();
        assert_eq!(rs.eta_table(), fresh.eta_table());
        assert_eq!(rs.next_table(), fresh.next_table());
    }

    #[test]
    fn congested_link_is_routed_around() {
        let map = build_grid(3, 3, 2, 200.0, true).unwrap();
        let mut f = TravelTimeField::free_flow(&map, 12.0);
        let (o, d) = (NodeId(0), NodeId(2));
        let direct = map.link_between(NodeId(0), NodeId(1)).unwrap();
        f.set(direct, 500.0);
        let mut rs = prepopulate(&map, &TravelTimeField::free_flow(&map, 12.0), d).unwrap();
        for _ in 0..9 {
            rs = relax_step(&rs, &map, &f);
        }
        let oracle = prepopulate(&map, &f, d).unwrap();
        assert_eq!(rs.next(o), oracle.next(o));
        assert_eq!(rs.next(o), Some(NodeId(3)));
    }

    #[test]
    fn next_hop_for_emv_cases() {
        let map = build_grid(1, 3, 1, 200.0, true).unwrap();
        let f = TravelTimeField::free_flow(&map, 12.0);
        let rs = prepopulate(&map, &f, NodeId(2)).unwrap();
        assert_eq!(next_hop_for_emv(&rs, &map, &f, NodeId(2), None).unwrap(), NodeId(2));
        assert_eq!(next_hop_for_emv(&rs, &map, &f, NodeId(0), None).unwrap(), NodeId(1));
        assert_eq!(next_hop_for_emv(&rs, &map, &f, NodeId(1), None).unwrap(), NodeId(2));
        // Arriving at 1 from 2, the only onward option is the U-turn: no route.
        let back = map.link_between(NodeId(2), NodeId(1));
        let rs0 = prepopulate(&map, &f, NodeId(0)).unwrap();
        assert_eq!(next_hop_for_emv(&rs0, &map, &f, NodeId(1), back).unwrap(), NodeId(0));
        let mut stale = rs.clone();
        stale.next[1] = Some(NodeId(0));
        let from0 = map.link_between(NodeId(0), NodeId(1));
        assert!(next_hop_for_emv(&stale, &map, &f, NodeId(1), from0).is_ok());
    }

    #[test]
    fn estimate_examples() {
        let map = Arc::new(build_grid(2, 2, 2, 200.0, true).unwrap());
        let sim = SimState::new(map.clone(), SimConfig::default(), None, 0).unwrap();
        let f = estimate_travel_times(&sim, REMAIN_FRACTION);
        for l in map.links() {
            assert!((f.get(l.id) - 200.0 / 12.0).abs() < 1e-12);
        }
        // k = ceil(0.5 * 8 / 2) = 2, v = 8.
        let k = (REMAIN_FRACTION * 8.0 / 2.0_f64).ceil();
        assert_eq!(200.0 / emv_speed(k, 12.0, 6.0), 25.0);
    }

    #[test]
    fn astar_trivial_cases() {
        let map = build_grid(4, 4, 2, 200.0, true).unwrap();
        let f = TravelTimeField::free_flow(&map, 12.0);
        assert_eq!(astar(&map, &f, NodeId(5), NodeId(5)).unwrap(), vec![NodeId(5)]);
        let p = astar(&map, &f, NodeId(0), NodeId(15)).unwrap();
        assert_eq!(p.len(), 7);
        for w in p.windows(2) {
            assert_eq!(
                map.grid_distance(w[1], NodeId(15)) + 1,
                map.grid_distance(w[0], NodeId(15))
            );
        }
    }

    #[test]
    fn astar_respects_avoidance() {
        let map = build_grid(3, 3, 2, 200.0, true).unwrap();
        let f = TravelTimeField::free_flow(&map, 12.0);
        let p = astar_avoiding(&map, &f, NodeId(1), NodeId(0), Some(NodeId(0))).unwrap();
        assert_ne!(p[1], NodeId(0));
        assert_eq!(*p.last().unwrap(), NodeId(0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn astar_cost_equals_dijkstra(seed in any::<u64>(), rows in 2usize..5, cols in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = build_grid(rows, cols, 2, 200.0, true).unwrap();
            let f = random_field(&map, &mut rng);
            let n = map.intersection_count();
            let (o, d) = (NodeId(rng.random_range(0..n)), NodeId(rng.random_range(0..n)));
            let path = astar(&map, &f, o, d).unwrap();
            let rs = prepopulate(&map, &f, d).unwrap();
            prop_assert_eq!(path_cost(&map, &f, &path).unwrap(), rs.eta(o));
        }

        #[test]
        fn lowering_a_link_never_raises_tail_eta(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = build_grid(3, 4, 2, 200.0, true).unwrap();
            let f = random_field(&map, &mut rng);
            let d = NodeId(rng.random_range(0..12));
            let rs = prepopulate(&map, &f, d).unwrap();
            let internal: Vec<_> = map.links().iter().filter(|l| l.is_internal()).collect();
            let link = internal[rng.random_range(0..internal.len())];
            let mut g = f.clone();
            g.set(link.id, f.get(link.id) * 0.5);
            let r2 = relax_step(&rs, &map, &g);
            prop_assert!(r2.eta(link.from) <= rs.eta(link.from));
            prop_assert!(bellman_residual_ok(&r2, &rs, &map, &g));
        }

        #[test]
        fn next_always_follows_a_link(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = build_manhattan(4, 3).unwrap();
            let f = random_field(&map, &mut rng);
            let d = NodeId(rng.random_range(0..map.intersection_count()));
            let mut rs = prepopulate(&map, &f, d).unwrap();
            for _ in 0..3 {
                rs = relax_step(&rs, &map, &random_field(&map, &mut rng));
                for i in map.intersections().filter(|&i| i != d) {
                    let j = rs.next(i).unwrap();
                    prop_assert!(map.link_between(i, j).is_some());
                }
            }
        }
    }
}
