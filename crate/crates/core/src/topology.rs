//! Node placement, mobility, neighbor discovery and hop-count routing.
//!
//! Routing is an instantly converging shortest-path table: for every
//! destination a breadth-first search runs outward from that destination,
//! expanding neighbors in ascending id order, and each node's next hop is its
//! parent in that tree. Tables are rebuilt whenever an adjacency changes.

use std::collections::VecDeque;
use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldGeometry {
    pub width: f64,
    pub height: f64,
    pub tx_range: f64,
}

impl Default for WorldGeometry {
    fn default() -> Self {
        Self {
            width: 2750.0,
            height: 2750.0,
            tx_range: 150.0,
        }
    }
}

impl WorldGeometry {
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    UniformRandom,
    Grid { spacing: f64 },
    Line { spacing: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MobilityModel {
    Static,
    RandomWaypoint {
        v_max: f64,
        pause: f64,
    },
    /// Visits the waypoints in order at constant speed, then stays put.
    Scripted {
        waypoints: Vec<Point>,
        speed: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityState {
    pub waypoint: Point,
    pub speed: f64,
    pub pause_remaining: f64,
    model: MobilityModel,
    script_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConnectivityReport {
    pub components: usize,
    pub largest_component: usize,
    pub unreachable_pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub topology_changed: bool,
}

const UNREACHABLE: u16 = u16::MAX;

/// Per-destination next hop and hop count for every node.
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    n: usize,
    hops: Vec<u16>,
    next: Vec<u32>,
}

impl RoutingTable {
    fn build(adjacency: &[Vec<NodeId>]) -> Self {
        let n = adjacency.len();
        let mut hops = vec![UNREACHABLE; n * n];
        let mut next = vec![u32::MAX; n * n];
        let mut queue = VecDeque::new();
        for dst in 0..n {
            let row = dst * n;
            hops[row + dst] = 0;
            next[row + dst] = dst as u32;
            queue.clear();
            queue.push_back(dst);
            while let Some(u) = queue.pop_front() {
                let h = hops[row + u];
                for v in &adjacency[u] {
                    let v = v.index();
                    if hops[row + v] == UNREACHABLE {
                        hops[row + v] = h + 1;
                        next[row + v] = u as u32;
                        queue.push_back(v);
                    }
                }
            }
        }
        Self { n, hops, next }
    }

    pub fn hops(&self, from: NodeId, to: NodeId) -> Option<u32> {
        match self.hops[to.index() * self.n + from.index()] {
            UNREACHABLE => None,
            h => Some(h as u32),
        }
    }

    pub fn next_hop(&self, from: NodeId, to: NodeId) -> Option<NodeId> {
        match self.next[to.index() * self.n + from.index()] {
            u32::MAX => None,
            v => Some(NodeId(v)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    geometry: WorldGeometry,
    positions: Vec<Point>,
    mobility: Vec<Option<MobilityState>>,
    adjacency: Vec<Vec<NodeId>>,
    routing: RoutingTable,
    rng: ChaCha8Rng,
    recomputes: u64,
}

impl Topology {
    /// Places `count` nodes deterministically from `seed`.
    pub fn build(seed: u64, geometry: WorldGeometry, count: usize, placement: Placement) -> Self {
        assert!(count >= 2, "a world needs at least two nodes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = match placement {
            Placement::UniformRandom => (0..count)
                .map(|_| {
                    Point::new(
                        rng.gen::<f64>() * geometry.width,
                        rng.gen::<f64>() * geometry.height,
                    )
                })
                .collect(),
            Placement::Grid { spacing } => {
                let cols = (count as f64).sqrt().ceil() as usize;
                (0..count)
                    .map(|i| Point::new((i % cols) as f64 * spacing, (i / cols) as f64 * spacing))
                    .collect()
            }
            Placement::Line { spacing } => (0..count)
                .map(|i| Point::new(i as f64 * spacing, geometry.height / 2.0))
                .collect(),
        };
        Self::from_positions(geometry, positions, rng)
    }

    pub fn from_positions(geometry: WorldGeometry, positions: Vec<Point>, rng: ChaCha8Rng) -> Self {
        let adjacency = compute_adjacency(&positions, geometry.tx_range);
        let routing = RoutingTable::build(&adjacency);
        Self {
            geometry,
            mobility: vec![None; positions.len()],
            positions,
            adjacency,
            routing,
            rng,
            recomputes: 1,
        }
    }

    pub fn geometry(&self) -> &WorldGeometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.positions.len() as u32).map(NodeId)
    }

    pub fn position(&self, node: NodeId) -> Point {
        self.positions[node.index()]
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        self.position(a).distance(&self.position(b))
    }

    pub fn in_range(&self, a: NodeId, b: NodeId) -> bool {
        self.distance(a, b) <= self.geometry.tx_range
    }

    /// Nodes within transmission range (closed ball), ascending id.
    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node.index()]
    }

    pub fn routing(&self) -> &RoutingTable {
        &self.routing
    }

    pub fn hops(&self, from: NodeId, to: NodeId) -> Option<u32> {
        self.routing.hops(from, to)
    }

    /// Number of routing-table rebuilds so far, the initial build included.
    pub fn routing_recomputes(&self) -> u64 {
        self.recomputes
    }

    /// Minimum-hop path following the routing table; empty if unreachable.
    pub fn shortest_path(&self, src: NodeId, dst: NodeId) -> Vec<NodeId> {
        if self.routing.hops(src, dst).is_none() {
            return Vec::new();
        }
        let mut path = vec![src];
        let mut at = src;
        while at != dst {
            at = self
                .routing
                .next_hop(at, dst)
                .expect("reachable destinations have a next hop");
            path.push(at);
        }
        path
    }

    /// Nodes within `radius` hops of `owner` (owner included) with their hop
    /// distance, ascending id.
    pub fn within_hops(&self, owner: NodeId, radius: u32) -> Vec<(NodeId, u32)> {
        self.nodes()
            .filter_map(|n| match self.hops(owner, n) {
                Some(h) if h <= radius => Some((n, h)),
                _ => None,
            })
            .collect()
    }

    pub fn connectivity(&self) -> ConnectivityReport {
        let n = self.len();
        let mut component = vec![usize::MAX; n];
        let mut sizes = Vec::new();
        for start in 0..n {
            if component[start] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            let mut size = 0;
            let mut queue = VecDeque::from([start]);
            component[start] = id;
            while let Some(u) = queue.pop_front() {
                size += 1;
                for v in &self.adjacency[u] {
                    if component[v.index()] == usize::MAX {
                        component[v.index()] = id;
                        queue.push_back(v.index());
                    }
                }
            }
            sizes.push(size);
        }
        let reachable: usize = sizes.iter().map(|s| s * (s - 1)).sum();
        ConnectivityReport {
            components: sizes.len(),
            largest_component: sizes.iter().copied().max().unwrap_or(0),
            unreachable_pairs: n * (n - 1) - reachable,
        }
    }

    pub fn is_mobile(&self, node: NodeId) -> bool {
        self.mobility[node.index()].is_some()
    }

    pub fn mobility_state(&self, node: NodeId) -> Option<&MobilityState> {
        self.mobility[node.index()].as_ref()
    }

    pub fn set_mobility(&mut self, node: NodeId, model: MobilityModel) {
        let state = match &model {
            MobilityModel::Static => None,
            MobilityModel::RandomWaypoint { v_max, .. } => {
                let v_max = *v_max;
                let waypoint = self.random_point();
                let speed = self.random_speed(v_max);
                Some(MobilityState {
                    waypoint,
                    speed,
                    pause_remaining: 0.0,
                    model,
                    script_index: 0,
                })
            }
            MobilityModel::Scripted { waypoints, speed } => {
                let waypoint = waypoints.first().copied().unwrap_or(self.position(node));
                Some(MobilityState {
                    waypoint,
                    speed: *speed,
                    pause_remaining: 0.0,
                    model: model.clone(),
                    script_index: 0,
                })
            }
        };
        self.mobility[node.index()] = state;
    }

    fn random_point(&mut self) -> Point {
        Point::new(
            self.rng.gen::<f64>() * self.geometry.width,
            self.rng.gen::<f64>() * self.geometry.height,
        )
    }

    /// Uniform in `(0, v_max]`.
    fn random_speed(&mut self, v_max: f64) -> f64 {
        v_max * (1.0 - self.rng.gen::<f64>())
    }

    /// Advances every mobile node by `dt` seconds and rebuilds routing once
    /// if any adjacency changed.
    pub fn mobility_step(&mut self, dt: f64) -> StepOutcome {
        assert!(dt > 0.0, "mobility step needs a positive dt");
        let mut moved = false;
        for i in 0..self.positions.len() {
            let Some(mut state) = self.mobility[i].take() else {
                continue;
            };
            moved |= self.advance(i, &mut state, dt);
            self.mobility[i] = Some(state);
        }
        if !moved {
            return StepOutcome {
                topology_changed: false,
            };
        }
        let adjacency = compute_adjacency(&self.positions, self.geometry.tx_range);
        let changed = adjacency != self.adjacency;
        if changed {
            self.adjacency = adjacency;
            self.routing = RoutingTable::build(&self.adjacency);
            self.recomputes += 1;
        }
        StepOutcome {
            topology_changed: changed,
        }
    }

    fn advance(&mut self, i: usize, state: &mut MobilityState, dt: f64) -> bool {
        let mut remaining = dt;
        let mut moved = false;
        while remaining > 0.0 {
            if state.pause_remaining > 0.0 {
                let wait = state.pause_remaining.min(remaining);
                state.pause_remaining -= wait;
                remaining -= wait;
                continue;
            }
            if state.speed <= 0.0 {
                break;
            }
            let pos = self.positions[i];
            let dist = pos.distance(&state.waypoint);
            let reach = state.speed * remaining;
            if reach < dist {
                let f = reach / dist;
                self.positions[i] = Point::new(
                    pos.x + f * (state.waypoint.x - pos.x),
                    pos.y + f * (state.waypoint.y - pos.y),
                );
                moved = true;
                break;
            }
            self.positions[i] = state.waypoint;
            moved |= dist > 0.0;
            remaining -= dist / state.speed;
            if !self.arrive(state) {
                break;
            }
        }
        moved
    }

    /// Picks the next leg after reaching a waypoint. Returns false when the
    /// node has nowhere further to go.
    fn arrive(&mut self, state: &mut MobilityState) -> bool {
        match state.model.clone() {
            MobilityModel::RandomWaypoint { v_max, pause } => {
                state.pause_remaining = pause;
                state.waypoint = self.random_point();
                state.speed = self.random_speed(v_max);
                true
            }
            MobilityModel::Scripted { waypoints, .. } => {
                state.script_index += 1;
                match waypoints.get(state.script_index) {
                    Some(&p) => {
                        state.waypoint = p;
                        true
                    }
                    None => {
                        state.speed = 0.0;
                        false
                    }
                }
            }
            MobilityModel::Static => false,
        }
    }

    /// One line per node: `id x y mobile`, mobile as 0/1.
    pub fn dump_nodes(&self) -> String {
        let mut out = String::new();
        for n in self.nodes() {
            let p = self.position(n);
            let _ = writeln!(
                out,
                "{} {:.3} {:.3} {}",
                n,
                p.x,
                p.y,
                u8::from(self.is_mobile(n))
            );
        }
        out
    }

    /// One line per node: `id: neighbor neighbor ...`.
    pub fn dump_adjacency(&self) -> String {
        let mut out = String::new();
        for n in self.nodes() {
            let _ = write!(out, "{n}:");
            for m in self.neighbors(n) {
                let _ = write!(out, " {m}");
            }
            out.push('\n');
        }
        out
    }
}

/// Closed-ball adjacency using a uniform grid of `range`-sized cells.
fn compute_adjacency(positions: &[Point], range: f64) -> Vec<Vec<NodeId>> {
    let n = positions.len();
    let cell = range.max(1e-9);
    let key = |p: &Point| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
    let mut buckets: std::collections::HashMap<(i64, i64), Vec<usize>> =
        std::collections::HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }
    let mut adjacency = vec![Vec::new(); n];
    for (i, p) in positions.iter().enumerate() {
        let (cx, cy) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = buckets.get(&(cx + dx, cy + dy)) {
                    for &j in bucket {
                        if j != i && p.distance(&positions[j]) <= range {
                            adjacency[i].push(NodeId(j as u32));
                        }
                    }
                }
            }
        }
        adjacency[i].sort_unstable();
    }
    adjacency
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize, spacing: f64) -> Topology {
        Topology::build(
            1,
            WorldGeometry {
                width: spacing * n as f64,
                height: 100.0,
                tx_range: 150.0,
            },
            n,
            Placement::Line { spacing },
        )
    }

    fn bfs_hops(topo: &Topology, src: NodeId) -> Vec<Option<u32>> {
        let mut dist = vec![None; topo.len()];
        dist[src.index()] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u.index()].unwrap();
            // recompute neighbors from raw geometry, independent of the adjacency cache
            for v in topo.nodes() {
                if v != u
                    && topo.distance(u, v) <= topo.geometry().tx_range
                    && dist[v.index()].is_none()
                {
                    dist[v.index()] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    #[test]
    fn line_interior_has_two_neighbors() {
        let topo = line(10, 100.0);
        for i in 1..9 {
            assert_eq!(topo.neighbors(NodeId(i)), &[NodeId(i - 1), NodeId(i + 1)]);
        }
        assert_eq!(topo.neighbors(NodeId(0)), &[NodeId(1)]);
        assert_eq!(
            topo.shortest_path(NodeId(0), NodeId(9)),
            (0..10).map(NodeId).collect::<Vec<_>>()
        );
        assert_eq!(topo.shortest_path(NodeId(4), NodeId(4)), vec![NodeId(4)]);
    }

    #[test]
    fn grid_has_four_neighborhood() {
        let geometry = WorldGeometry {
            width: 1000.0,
            height: 1000.0,
            tx_range: 150.0,
        };
        let topo = Topology::build(3, geometry, 25, Placement::Grid { spacing: 140.0 });
        for n in topo.nodes() {
            let (r, c) = (n.0 / 5, n.0 % 5);
            let mut expected = Vec::new();
            for m in topo.nodes() {
                let (r2, c2) = (m.0 / 5, m.0 % 5);
                if r.abs_diff(r2) + c.abs_diff(c2) == 1 {
                    expected.push(m);
                }
            }
            assert_eq!(topo.neighbors(n), expected.as_slice(), "node {n}");
        }
    }

    #[test]
    fn same_seed_same_positions() {
        let g = WorldGeometry::default();
        let a = Topology::build(42, g, 50, Placement::UniformRandom);
        let b = Topology::build(42, g, 50, Placement::UniformRandom);
        assert_eq!(a.dump_nodes(), b.dump_nodes());
        let c = Topology::build(43, g, 50, Placement::UniformRandom);
        assert_ne!(a.dump_nodes(), c.dump_nodes());
    }

    #[test]
    fn neighbor_edge_cases() {
        let g = WorldGeometry {
            width: 1000.0,
            height: 1000.0,
            tx_range: 150.0,
        };
        let rng = ChaCha8Rng::seed_from_u64(0);
        let topo = Topology::from_positions(
            g,
            vec![
                Point::new(0.0, 0.0),
                Point::new(149.0, 0.0),
                Point::new(299.0, 0.0),
                Point::new(900.0, 900.0),
            ],
            rng,
        );
        assert!(topo.neighbors(NodeId(3)).is_empty());
        assert!(topo.neighbors(NodeId(0)).contains(&NodeId(1)));
        assert!(topo.neighbors(NodeId(1)).contains(&NodeId(0)));
        // exactly 150 m apart
        assert!(topo.neighbors(NodeId(1)).contains(&NodeId(2)));
        assert!(topo.shortest_path(NodeId(0), NodeId(3)).is_empty());
        let report = topo.connectivity();
        assert_eq!(report.components, 2);
        assert_eq!(report.largest_component, 3);
        assert_eq!(report.unreachable_pairs, 6);
    }

    #[test]
    fn random_world_hops_match_bfs() {
        let g = WorldGeometry {
            width: 800.0,
            height: 800.0,
            tx_range: 150.0,
        };
        let topo = Topology::build(11, g, 50, Placement::UniformRandom);
        for src in topo.nodes() {
            let oracle = bfs_hops(&topo, src);
            for dst in topo.nodes() {
                assert_eq!(topo.hops(src, dst), oracle[dst.index()]);
                let path = topo.shortest_path(src, dst);
                match oracle[dst.index()] {
                    Some(h) => {
                        assert_eq!(path.len() as u32, h + 1);
                        for w in path.windows(2) {
                            assert!(topo.in_range(w[0], w[1]));
                        }
                    }
                    None => assert!(path.is_empty()),
                }
            }
        }
    }

    #[test]
    fn zero_speed_never_moves() {
        let mut topo = line(5, 100.0);
        topo.set_mobility(
            NodeId(2),
            MobilityModel::RandomWaypoint {
                v_max: 0.0,
                pause: 2.5,
            },
        );
        let before = topo.position(NodeId(2));
        for _ in 0..10 {
            assert!(!topo.mobility_step(1.0).topology_changed);
        }
        assert_eq!(topo.position(NodeId(2)), before);
    }

    #[test]
    fn arrival_is_exact() {
        let mut topo = line(3, 100.0);
        let start = topo.position(NodeId(1));
        let target = Point::new(start.x + 10.0, start.y);
        topo.set_mobility(
            NodeId(1),
            MobilityModel::Scripted {
                waypoints: vec![target],
                speed: 2.0,
            },
        );
        topo.mobility_step(5.0);
        assert_eq!(topo.position(NodeId(1)), target);
        topo.mobility_step(5.0);
        assert_eq!(topo.position(NodeId(1)), target);
    }

    #[test]
    fn adjacency_change_rebuilds_routing_once() {
        let mut topo = line(4, 100.0);
        assert_eq!(topo.routing_recomputes(), 1);
        let far = Point::new(topo.position(NodeId(3)).x + 400.0, 50.0);
        topo.set_mobility(
            NodeId(3),
            MobilityModel::Scripted {
                waypoints: vec![far],
                speed: 30.0,
            },
        );
        // 130 m from node 2 after one second, 160 m after two
        let s1 = topo.mobility_step(1.0);
        assert!(!s1.topology_changed);
        assert_eq!(topo.routing_recomputes(), 1);
        let s2 = topo.mobility_step(1.0);
        assert!(s2.topology_changed);
        assert_eq!(topo.routing_recomputes(), 2);
        assert_eq!(topo.hops(NodeId(0), NodeId(3)), None);
    }

    #[test]
    fn dumps_have_one_line_per_node() {
        let topo = line(3, 100.0);
        assert_eq!(topo.dump_nodes().lines().count(), 3);
        assert!(topo.dump_nodes().starts_with("0 0.000 50.000 0"));
        assert_eq!(topo.dump_adjacency().lines().nth(1).unwrap(), "1: 0 2");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn waypoint_keeps_nodes_in_bounds(seed in 0u64..1000, steps in 1usize..200) {
            let g = WorldGeometry { width: 600.0, height: 400.0, tx_range: 150.0 };
            let mut topo = Topology::build(seed, g, 12, Placement::UniformRandom);
            for n in 0..12 {
                topo.set_mobility(NodeId(n), MobilityModel::RandomWaypoint { v_max: 20.0, pause: 2.5 });
            }
            for _ in 0..steps {
                topo.mobility_step(0.7);
                for n in topo.nodes() {
                    prop_assert!(g.contains(&topo.position(n)));
                    let s = topo.mobility_state(n).unwrap();
                    prop_assert!(s.speed > 0.0 && s.speed <= 20.0);
                }
            }
        }
    }
}
