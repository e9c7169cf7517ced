//! Traffic maps: intersections, directed links, lanes, movements and phase tables.
//!
//! Intersections always occupy node ids `0..intersection_count()` in row-major order.
//! Every boundary side of the grid carries stub links to a dedicated boundary node:
//! source stubs inject demand, sink stubs absorb finished trips. Stubs take part in
//! movements and phases but never in pressure.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::NetworkError;

/// Effective vehicle length plus gap; lane capacity is `floor(length / VEHICLE_SPACING)`.
pub const VEHICLE_SPACING: f64 = 7.5;

/// Number of action slots every intersection exposes.
pub const PHASE_SLOTS: usize = 8;

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub usize);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Node id; intersections come first.
    NodeId
);
id_type!(
    /// Directed link id.
    LinkId
);
id_type!(
    /// Lane id, unique across the map.
    LaneId
);

/// Compass direction. Rows grow southwards, columns grow eastwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::North, Direction::East, Direction::South, Direction::West];

    /// Code used in network inputs: N=0, E=1, S=2, W=3.
    pub fn code(self) -> usize {
        match self {
            Direction::North => 0,
            Direction::East => 1,
            Direction::South => 2,
            Direction::West => 3,
        }
    }

    pub fn from_code(code: usize) -> Option<Direction> {
        Direction::ALL.get(code).copied()
    }

    pub fn opposite(self) -> Direction {
        Direction::ALL[(self.code() + 2) % 4]
    }

    /// Heading after a right turn.
    pub fn right(self) -> Direction {
        Direction::ALL[(self.code() + 1) % 4]
    }

    /// Heading after a left turn.
    pub fn left(self) -> Direction {
        Direction::ALL[(self.code() + 3) % 4]
    }

    /// (row, col) offset of one step in this direction.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Direction::North => (-1, 0),
            Direction::East => (0, 1),
            Direction::South => (1, 0),
            Direction::West => (0, -1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Turn {
    Left,
    Through,
    Right,
}

impl Turn {
    /// Turn taken when leaving a link with heading `incoming` onto one with heading
    /// `outgoing`; `None` for a U-turn.
    pub fn between(incoming: Direction, outgoing: Direction) -> Option<Turn> {
        if outgoing == incoming {
            Some(Turn::Through)
        } else if outgoing == incoming.right() {
            Some(Turn::Right)
        } else if outgoing == incoming.left() {
            Some(Turn::Left)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Intersection,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub row: i64,
    pub col: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkKind {
    Internal,
    /// Boundary node -> intersection; demand enters here.
    Source,
    /// Intersection -> boundary node; trips end when they enter one.
    Sink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    /// Meters.
    pub length: f64,
    pub lanes: Vec<LaneId>,
    pub kind: LinkKind,
    /// Direction of travel along the link.
    pub heading: Direction,
}

impl Link {
    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_internal(&self) -> bool {
        self.kind == LinkKind::Internal
    }

    /// Side of the head node from which this link arrives.
    pub fn approach(&self) -> Direction {
        self.heading.opposite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: LaneId,
    pub link: LinkId,
    /// Position within the link, 0 = rightmost.
    pub index: usize,
}

/// Lane-to-link traffic movement: a vehicle on `from_lane` may enter any lane of `to_link`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Movement {
    pub from_lane: LaneId,
    pub to_link: LinkId,
    pub turn: Turn,
}

/// Lane-to-lane expansion of a [`Movement`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LanePair {
    pub from: LaneId,
    pub to: LaneId,
}

/// Link-level movement with the set of phases that permit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMove {
    pub from_link: LinkId,
    pub to_link: LinkId,
    pub turn: Turn,
    /// Bit `p` set iff phase `p` of the owning table permits this move.
    pub phase_mask: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    /// Index within the node's phase table.
    pub id: usize,
    /// Index into [`CANONICAL_PHASES`] this phase was derived from.
    pub canonical: usize,
    /// Permitted lane-to-link movements, right turns included.
    pub movements: Vec<Movement>,
}

/// Canonical phases as (approach, turn) pairs of their non-right movements.
/// Right turns are green in every phase.
pub const CANONICAL_PHASES: [(&str, &[(Direction, Turn)]); PHASE_SLOTS] = [
    (
        "NS-through",
        &[(Direction::North, Turn::Through), (Direction::South, Turn::Through)],
    ),
    (
        "EW-through",
        &[(Direction::East, Turn::Through), (Direction::West, Turn::Through)],
    ),
    (
        "NS-left",
        &[(Direction::North, Turn::Left), (Direction::South, Turn::Left)],
    ),
    (
        "EW-left",
        &[(Direction::East, Turn::Left), (Direction::West, Turn::Left)],
    ),
    (
        "N-through+left",
        &[(Direction::North, Turn::Through), (Direction::North, Turn::Left)],
    ),
    (
        "S-through+left",
        &[(Direction::South, Turn::Through), (Direction::South, Turn::Left)],
    ),
    (
        "E-through+left",
        &[(Direction::East, Turn::Through), (Direction::East, Turn::Left)],
    ),
    (
        "W-through+left",
        &[(Direction::West, Turn::Through), (Direction::West, Turn::Left)],
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTable {
    pub phases: Vec<Phase>,
    /// Action slot -> phase index; `None` is a no-op that holds the current phase.
    pub slots: [Option<usize>; PHASE_SLOTS],
    pub link_moves: Vec<LinkMove>,
}

impl PhaseTable {
    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn link_move(&self, from: LinkId, to: LinkId) -> Option<&LinkMove> {
        self.link_moves.iter().find(|m| m.from_link == from && m.to_link == to)
    }

    /// Whether phase `phase` lets traffic go from link `from` to link `to`.
    pub fn permits(&self, phase: usize, from: LinkId, to: LinkId) -> bool {
        self.link_move(from, to)
            .is_some_and(|m| m.phase_mask & (1 << phase) != 0)
    }

    /// Lowest-index phase permitting the move, if any.
    pub fn first_permitting(&self, from: LinkId, to: LinkId) -> Option<usize> {
        let mask = self.link_move(from, to)?.phase_mask;
        (0..self.phases.len()).find(|p| mask & (1 << p) != 0)
    }

    /// Resolves an action slot to a phase index (`None` = hold).
    pub fn resolve(&self, slot: usize) -> Option<usize> {
        self.slots.get(slot).copied().flatten()
    }

    /// Action slot that selects phase `phase`.
    pub fn slot_of(&self, phase: usize) -> Option<usize> {
        self.slots.iter().position(|s| *s == Some(phase))
    }
}

/// How a map was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MapKind {
    Grid {
        rows: usize,
        cols: usize,
        bidirectional: bool,
    },
    Manhattan {
        streets: usize,
        avenues: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficMap {
    pub kind: MapKind,
    rows: usize,
    cols: usize,
    nodes: Vec<Node>,
    links: Vec<Link>,
    lanes: Vec<Lane>,
    incoming: Vec<Vec<LinkId>>,
    outgoing: Vec<Vec<LinkId>>,
    phase_tables: Vec<PhaseTable>,
}

/// Builds a `rows x cols` grid. Bidirectional grids link every 4-neighbour pair both
/// ways; one-way grids alternate row and column directions (see [`build_one_way`]).
pub fn build_grid(
    rows: usize,
    cols: usize,
    lanes_per_link: usize,
    link_length: f64,
    bidirectional: bool,
) -> Result<TrafficMap, NetworkError> {
    check_dims("rows", rows, 1)?;
    check_dims("cols", cols, 1)?;
    check_lanes("lanes_per_link", lanes_per_link)?;
    check_length("link_length", link_length)?;
    let kind = MapKind::Grid {
        rows,
        cols,
        bidirectional,
    };
    if bidirectional {
        let mut b = Builder::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                for dir in Direction::ALL {
                    b.street(r, c, dir, lanes_per_link, link_length, true, true);
                }
            }
        }
        b.finish(kind)
    } else {
        build_one_way(
            kind,
            rows,
            cols,
            (lanes_per_link, link_length),
            (lanes_per_link, link_length),
        )
    }
}

/// One-directional Manhattan-style grid: `streets` east/west rows with 2 lanes and
/// `avenues` north/south columns with 4 lanes.
pub fn build_manhattan(streets: usize, avenues: usize) -> Result<TrafficMap, NetworkError> {
    check_dims("streets", streets, 2)?;
    check_dims("avenues", avenues, 2)?;
    build_one_way(
        MapKind::Manhattan { streets, avenues },
        streets,
        avenues,
        (MANHATTAN_STREET_LANES, MANHATTAN_STREET_BLOCK),
        (MANHATTAN_AVENUE_LANES, MANHATTAN_AVENUE_BLOCK),
    )
}

pub const MANHATTAN_STREET_LANES: usize = 2;
pub const MANHATTAN_AVENUE_LANES: usize = 4;
/// Street links run between avenues.
pub const MANHATTAN_STREET_BLOCK: f64 = 240.0;
/// Avenue links run between streets.
pub const MANHATTAN_AVENUE_BLOCK: f64 = 80.0;

/// Heading of row `r` in a one-way grid with `rows` rows.
///
/// Rows alternate starting eastbound; the last row is forced westbound so that the
/// two corner nodes on the southern edge keep an inbound and an outbound link.
pub fn one_way_row_heading(r: usize, rows: usize) -> Direction {
    if r == rows - 1 {
        Direction::West
    } else if r % 2 == 0 {
        Direction::East
    } else {
        Direction::West
    }
}

/// Heading of column `c`: alternating from northbound, last column southbound.
pub fn one_way_col_heading(c: usize, cols: usize) -> Direction {
    if c == cols - 1 {
        Direction::South
    } else if c % 2 == 0 {
        Direction::North
    } else {
        Direction::South
    }
}

fn build_one_way(
    kind: MapKind,
    rows: usize,
    cols: usize,
    (row_lanes, row_len): (usize, f64),
    (col_lanes, col_len): (usize, f64),
) -> Result<TrafficMap, NetworkError> {
    let mut b = Builder::new(rows, cols);
    for r in 0..rows {
        let h = one_way_row_heading(r, rows);
        for c in 0..cols {
            // Outgoing link along the row, plus the source stub at the upstream end.
            b.street(r, c, h, row_lanes, row_len, true, false);
            b.street(r, c, h.opposite(), row_lanes, row_len, false, true);
        }
    }
    for c in 0..cols {
        let h = one_way_col_heading(c, cols);
        for r in 0..rows {
            b.street(r, c, h, col_lanes, col_len, true, false);
            b.street(r, c, h.opposite(), col_lanes, col_len, false, true);
        }
    }
    b.finish(kind)
}

fn check_dims(name: &'static str, v: usize, min: usize) -> Result<(), NetworkError> {
    if v < min {
        return Err(NetworkError::InvalidParameter {
            name,
            reason: format!("must be at least {min}, got {v}"),
        });
    }
    Ok(())
}

fn check_lanes(name: &'static str, v: usize) -> Result<(), NetworkError> {
    if v < 1 {
        return Err(NetworkError::InvalidParameter {
            name,
            reason: "must be at least 1".into(),
        });
    }
    Ok(())
}

fn check_length(name: &'static str, v: f64) -> Result<(), NetworkError> {
    if !(v.is_finite() && v > 0.0) {
        return Err(NetworkError::InvalidParameter {
            name,
            reason: format!("must be positive and finite, got {v}"),
        });
    }
    Ok(())
}

struct Builder {
    rows: usize,
    cols: usize,
    nodes: Vec<Node>,
    links: Vec<Link>,
    lanes: Vec<Lane>,
    boundary: std::collections::BTreeMap<(i64, i64), NodeId>,
}

impl Builder {
    fn new(rows: usize, cols: usize) -> Self {
        let mut nodes = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                nodes.push(Node {
                    id: NodeId(nodes.len()),
                    kind: NodeKind::Intersection,
                    row: r as i64,
                    col: c as i64,
                });
            }
        }
        Builder {
            rows,
            cols,
            nodes,
            links: Vec::new(),
            lanes: Vec::new(),
            boundary: Default::default(),
        }
    }

    fn boundary_node(&mut self, row: i64, col: i64) -> NodeId {
        if let Some(id) = self.boundary.get(&(row, col)) {
            return *id;
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            id,
            kind: NodeKind::Boundary,
            row,
            col,
        });
        self.boundary.insert((row, col), id);
        id
    }

    /// Adds the link leaving (r, c) towards `dir` (internal or sink) when `out` is set,
    /// and the source stub entering (r, c) from `dir` when `stub_in` is set and (r, c)
    /// has no neighbour on that side.
    #[allow(clippy::too_many_arguments)]
    fn street(&mut self, r: usize, c: usize, dir: Direction, lanes: usize, length: f64, out: bool, stub_in: bool) {
        let here = NodeId(r * self.cols + c);
        let (dr, dc) = dir.delta();
        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
        let inside = nr >= 0 && nc >= 0 && (nr as usize) < self.rows && (nc as usize) < self.cols;
        if inside {
            if out {
                let there = NodeId(nr as usize * self.cols + nc as usize);
                self.push_link(here, there, length, lanes, LinkKind::Internal, dir);
            }
        } else {
            let b = self.boundary_node(nr, nc);
            if out {
                self.push_link(here, b, length, lanes, LinkKind::Sink, dir);
            }
            if stub_in {
                self.push_link(b, here, length, lanes, LinkKind::Source, dir.opposite());
            }
        }
    }

    fn push_link(&mut self, from: NodeId, to: NodeId, length: f64, lanes: usize, kind: LinkKind, heading: Direction) {
        let id = LinkId(self.links.len());
        let lane_ids = (0..lanes)
            .map(|index| {
                let lid = LaneId(self.lanes.len());
                self.lanes.push(Lane {
                    id: lid,
                    link: id,
                    index,
                });
                lid
            })
            .collect();
        self.links.push(Link {
            id,
            from,
            to,
            length,
            lanes: lane_ids,
            kind,
            heading,
        });
    }

    fn finish(self, kind: MapKind) -> Result<TrafficMap, NetworkError> {
        let n = self.nodes.len();
        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        for l in &self.links {
            outgoing[l.from.0].push(l.id);
            incoming[l.to.0].push(l.id);
        }
        let mut map = TrafficMap {
            kind,
            rows: self.rows,
            cols: self.cols,
            nodes: self.nodes,
            links: self.links,
            lanes: self.lanes,
            incoming,
            outgoing,
            phase_tables: Vec::new(),
        };
        map.phase_tables = (0..map.intersection_count())
            .map(|i| compute_phase_table(&map, NodeId(i)))
            .collect();
        map.validate()?;
        Ok(map)
    }
}

fn compute_phase_table(map: &TrafficMap, node: NodeId) -> PhaseTable {
    let mut link_moves = Vec::new();
    for &lin in map.incoming(node) {
        let li = map.link(lin);
        for &lout in map.outgoing(node) {
            let lo = map.link(lout);
            if let Some(turn) = Turn::between(li.heading, lo.heading) {
                link_moves.push(LinkMove {
                    from_link: lin,
                    to_link: lout,
                    turn,
                    phase_mask: 0,
                });
            }
        }
    }

    // Distinct non-empty canonical phases, in canonical order.
    let mut kept: Vec<(usize, Vec<usize>)> = Vec::new();
    for (k, (_, def)) in CANONICAL_PHASES.iter().enumerate() {
        let set: Vec<usize> = link_moves
            .iter()
            .enumerate()
            .filter(|(_, m)| m.turn != Turn::Right && def.contains(&(map.link(m.from_link).approach(), m.turn)))
            .map(|(i, _)| i)
            .collect();
        if !set.is_empty() && !kept.iter().any(|(_, s)| *s == set) {
            kept.push((k, set));
        }
    }
    if kept.is_empty() {
        // Only right turns exist; a single all-rights phase keeps the table usable.
        kept.push((0, Vec::new()));
    }

    let mut phases = Vec::with_capacity(kept.len());
    let mut slots = [None; PHASE_SLOTS];
    for (p, (_, set)) in kept.iter().enumerate() {
        slots[p] = Some(p);
        for (i, m) in link_moves.iter_mut().enumerate() {
            if m.turn == Turn::Right || set.contains(&i) {
                m.phase_mask |= 1 << p;
            }
        }
    }
    for (p, (canonical, _)) in kept.iter().enumerate() {
        let mut movements = Vec::new();
        for m in link_moves.iter().filter(|m| m.phase_mask & (1 << p) != 0) {
            for &lane in &map.link(m.from_link).lanes {
                movements.push(Movement {
                    from_lane: lane,
                    to_link: m.to_link,
                    turn: m.turn,
                });
            }
        }
        movements.sort();
        phases.push(Phase {
            id: p,
            canonical: *canonical,
            movements,
        });
    }
    PhaseTable {
        phases,
        slots,
        link_moves,
    }
}

impl TrafficMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn intersection_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn intersections(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.intersection_count()).map(NodeId)
    }

    pub fn is_intersection(&self, node: NodeId) -> bool {
        node.0 < self.intersection_count()
    }

    pub fn intersection_at(&self, row: usize, col: usize) -> Option<NodeId> {
        (row < self.rows && col < self.cols).then_some(NodeId(row * self.cols + col))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn lane(&self, id: LaneId) -> &Lane {
        &self.lanes[id.0]
    }

    pub fn lane_link(&self, id: LaneId) -> &Link {
        self.link(self.lanes[id.0].link)
    }

    pub fn incoming(&self, node: NodeId) -> &[LinkId] {
        &self.incoming[node.0]
    }

    pub fn outgoing(&self, node: NodeId) -> &[LinkId] {
        &self.outgoing[node.0]
    }

    /// Vehicle capacity x_max of a lane.
    pub fn lane_capacity(&self, lane: LaneId) -> usize {
        link_capacity_per_lane(self.lane_link(lane).length)
    }

    pub fn phase_table(&self, node: NodeId) -> &PhaseTable {
        &self.phase_tables[node.0]
    }

    /// Phases of `node`; padded slots are reported by [`PhaseTable::slots`].
    pub fn phases(&self, node: NodeId) -> Result<&[Phase], NetworkError> {
        if !self.is_intersection(node) {
            return Err(NetworkError::UnknownNode(node.0));
        }
        Ok(&self.phase_tables[node.0].phases)
    }

    /// All lane-to-link movements through `node`.
    pub fn permissible_movements(&self, node: NodeId) -> Result<Vec<Movement>, NetworkError> {
        if !self.is_intersection(node) {
            return Err(NetworkError::UnknownNode(node.0));
        }
        let mut out = Vec::new();
        for m in &self.phase_tables[node.0].link_moves {
            for &lane in &self.link(m.from_link).lanes {
                out.push(Movement {
                    from_lane: lane,
                    to_link: m.to_link,
                    turn: m.turn,
                });
            }
        }
        out.sort();
        Ok(out)
    }

    /// Lane-to-lane expansion of a movement.
    pub fn lane_pairs(&self, m: &Movement) -> impl Iterator<Item = LanePair> + '_ {
        let from = m.from_lane;
        self.link(m.to_link).lanes.iter().map(move |&to| LanePair { from, to })
    }

    /// Link from `from` to `to`, if any.
    pub fn link_between(&self, from: NodeId, to: NodeId) -> Option<LinkId> {
        self.outgoing[from.0]
            .iter()
            .copied()
            .find(|&l| self.links[l.0].to == to)
    }

    /// Internal link leaving `node` with the given heading.
    pub fn outgoing_towards(&self, node: NodeId, heading: Direction) -> Option<LinkId> {
        self.outgoing[node.0]
            .iter()
            .copied()
            .find(|&l| self.links[l.0].heading == heading)
    }

    /// Link arriving at `node` on the given approach side.
    pub fn incoming_from(&self, node: NodeId, approach: Direction) -> Option<LinkId> {
        self.incoming[node.0]
            .iter()
            .copied()
            .find(|&l| self.links[l.0].approach() == approach)
    }

    /// Intersection adjacent to `node` on side `dir` through an internal link in
    /// either direction.
    pub fn neighbor(&self, node: NodeId, dir: Direction) -> Option<NodeId> {
        let n = &self.nodes[node.0];
        let (dr, dc) = dir.delta();
        let (r, c) = (n.row + dr, n.col + dc);
        if r < 0 || c < 0 {
            return None;
        }
        let other = self.intersection_at(r as usize, c as usize)?;
        (self.link_between(node, other).is_some() || self.link_between(other, node).is_some()).then_some(other)
    }

    /// Intersections reachable from `node` over internal links.
    pub fn internal_successors(&self, node: NodeId) -> impl Iterator<Item = (LinkId, NodeId)> + '_ {
        self.outgoing[node.0].iter().filter_map(move |&l| {
            let link = &self.links[l.0];
            link.is_internal().then_some((l, link.to))
        })
    }

    /// Largest lane count over all links.
    pub fn max_lanes(&self) -> usize {
        self.links.iter().map(|l| l.lane_count()).max().unwrap_or(1)
    }

    /// Manhattan hop distance between two intersections.
    pub fn grid_distance(&self, a: NodeId, b: NodeId) -> usize {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        ((na.row - nb.row).abs() + (na.col - nb.col).abs()) as usize
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |s: String| Err(NetworkError::Inconsistent(s));
        let n_int = self.intersection_count();
        if self.nodes.len() < n_int {
            return bad("fewer nodes than intersections".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id.0 != i {
                return bad(format!("node {i} carries id {}", n.id));
            }
            let expect = if i < n_int {
                NodeKind::Intersection
            } else {
                NodeKind::Boundary
            };
            if n.kind != expect {
                return bad(format!("node {i} has kind {:?}", n.kind));
            }
        }
        if self.incoming.len() != self.nodes.len() || self.outgoing.len() != self.nodes.len() {
            return bad("adjacency size mismatch".into());
        }
        let mut lane_owner = vec![None; self.lanes.len()];
        for (k, l) in self.links.iter().enumerate() {
            if l.id.0 != k {
                return bad(format!("link {k} carries id {}", l.id));
            }
            if !(l.length.is_finite() && l.length > 0.0) {
                return bad(format!("link {k} has length {}", l.length));
            }
            if l.lanes.is_empty() {
                return bad(format!("link {k} has no lanes"));
            }
            if l.from.0 >= self.nodes.len() || l.to.0 >= self.nodes.len() {
                return bad(format!("link {k} references a missing node"));
            }
            let (fi, ti) = (self.is_intersection(l.from), self.is_intersection(l.to));
            let kind_ok = match l.kind {
                LinkKind::Internal => fi && ti,
                LinkKind::Source => !fi && ti,
                LinkKind::Sink => fi && !ti,
            };
            if !kind_ok {
                return bad(format!("link {k} endpoints do not match kind {:?}", l.kind));
            }
            let (a, b) = (&self.nodes[l.from.0], &self.nodes[l.to.0]);
            if (b.row - a.row, b.col - a.col) != l.heading.delta() {
                return bad(format!("link {k} heading disagrees with geometry"));
            }
            if self.outgoing[l.from.0].iter().filter(|&&x| x == l.id).count() != 1
                || self.incoming[l.to.0].iter().filter(|&&x| x == l.id).count() != 1
            {
                return bad(format!("link {k} is not listed exactly once in adjacency"));
            }
            for (idx, &lane) in l.lanes.iter().enumerate() {
                let Some(rec) = self.lanes.get(lane.0) else {
                    return bad(format!("link {k} references missing lane {lane}"));
                };
                if rec.link != l.id || rec.index != idx || lane_owner[lane.0].is_some() {
                    return bad(format!("lane {lane} ownership is inconsistent"));
                }
                lane_owner[lane.0] = Some(l.id);
            }
        }
        if let Some(orphan) = lane_owner.iter().position(Option::is_none) {
            return bad(format!("lane {orphan} belongs to no link"));
        }
        let listed: usize =
            self.outgoing.iter().map(Vec::len).sum::<usize>() + self.incoming.iter().map(Vec::len).sum::<usize>();
        if listed != 2 * self.links.len() {
            return bad("adjacency lists contain foreign entries".into());
        }
        if self.phase_tables.len() != n_int {
            return bad("phase table count mismatch".into());
        }
        for i in self.intersections() {
            if self.phase_tables[i.0] != compute_phase_table(self, i) {
                return bad(format!("phase table of node {i} is not canonical"));
            }
        }
        self.check_strongly_connected()
    }

    fn check_strongly_connected(&self) -> Result<(), NetworkError> {
        let n = self.intersection_count();
        let reach = |forward: bool| -> Vec<bool> {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(u) = queue.pop_front() {
                let adj = if forward { &self.outgoing[u] } else { &self.incoming[u] };
                for &l in adj {
                    let link = &self.links[l.0];
                    if !link.is_internal() {
                        continue;
                    }
                    let v = if forward { link.to.0 } else { link.from.0 };
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            seen
        };
        if let Some(v) = reach(true).iter().position(|s| !s) {
            return Err(NetworkError::NotStronglyConnected { from: 0, to: v });
        }
        if let Some(v) = reach(false).iter().position(|s| !s) {
            return Err(NetworkError::NotStronglyConnected { from: v, to: 0 });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, NetworkError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<TrafficMap, NetworkError> {
        let map: TrafficMap = serde_json::from_str(text)?;
        map.validate()?;
        Ok(map)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrafficMap, NetworkError> {
        TrafficMap::from_json(&std::fs::read_to_string(path)?)
    }
}

/// x_max for a lane of the given length.
pub fn link_capacity_per_lane(length: f64) -> usize {
    ((length / VEHICLE_SPACING).floor() as usize).max(1)
}
