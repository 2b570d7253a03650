//! Attacker traceback over a contact-based small world.
//!
//! A traceback session starts at the victim. The victim queries its own
//! vicinity (nodes within `R` hops) and a set of contacts `R + r` hops away.
//! Each contact queries its vicinity for nodes that logged a matching
//! abnormality. Only contacts whose vicinity matched keep expanding the
//! search, which steers it toward the attacker.
//!
//! Coarse traceback compares regional activity signatures with the KS test.
//! Fine traceback follows per-link DATA counts hop by hop from the victim.
//! At merge points it uses combinational matching.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mac_sim::World;
use crate::stats::{
    ks_statistic, ks_test, AbnormalityMonitor, CoarseSignature, Component, DetectorConfig, Episode,
    StatsError, Tolerance,
};
use crate::topology::{NodeId, Topology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("victim {0} holds no attack signature")]
    NoSignature(NodeId),
    #[error("traceback failed: no region matched the attack signature")]
    NoMatch,
    #[error("{k} candidates exceed the exhaustive limit of {k_max}")]
    CombinationExplosion { k: usize, k_max: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanParams {
    /// NoC
    pub contact_count: usize,
    /// R
    pub vicinity_radius: u32,
    /// r
    pub contact_distance: u32,
    /// d
    pub search_depth: u32,
}

impl Default for PlanParams {
    fn default() -> Self {
        Self {
            contact_count: 6,
            vicinity_radius: 3,
            contact_distance: 3,
            search_depth: 5,
        }
    }
}

/// Borders and contacts chosen by one owner. `contacts[i]` was reached
/// through `via[i]`; borders without a usable contact are counted in
/// `unfilled`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContactPlan {
    pub owner: NodeId,
    pub params: PlanParams,
    pub borders: Vec<NodeId>,
    pub contacts: Vec<NodeId>,
    pub via: Vec<NodeId>,
    pub unfilled: usize,
}

fn angle_between(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Picks up to `contact_count` borders at exactly `R` hops, spread as widely
/// as possible in angle, and one contact `r` hops beyond each.
///
/// With `outward_from = Some(v)`, borders may not be closer to `v` than the
/// owner and contacts must be strictly farther from `v`.
pub fn select_contacts(
    topo: &Topology,
    owner: NodeId,
    params: PlanParams,
    outward_from: Option<NodeId>,
) -> ContactPlan {
    let big_r = params.vicinity_radius;
    let base = outward_from.and_then(|v| topo.hops(v, owner).map(|h| (v, h)));
    let ring: Vec<NodeId> = topo
        .within_hops(owner, big_r)
        .into_iter()
        .filter(|&(n, h)| {
            h == big_r
                && big_r > 0
                && base.map_or(true, |(v, h0)| topo.hops(v, n).is_some_and(|h| h >= h0))
        })
        .map(|(n, _)| n)
        .collect();

    let o = topo.position(owner);
    let angle = |n: NodeId| {
        let p = topo.position(n);
        (p.y - o.y).atan2(p.x - o.x)
    };
    // Borders with a node exactly `R + r` hops out behind them come first;
    // a ring node can sit at `R` hops only because of a routing detour.
    let reaches_out = |b: NodeId| {
        topo.within_hops(b, params.contact_distance)
            .into_iter()
            .any(|(c, h)| {
                h == params.contact_distance
                    && topo.hops(owner, c) == Some(big_r + params.contact_distance)
            })
    };
    let (capable, rest): (Vec<NodeId>, Vec<NodeId>) =
        ring.into_iter().partition(|&b| reaches_out(b));
    let mut borders: Vec<NodeId> = Vec::new();
    for mut remaining in [capable, rest] {
        while borders.len() < params.contact_count && !remaining.is_empty() {
            let mut pick = 0;
            if !borders.is_empty() {
                let spread = |c: NodeId| {
                    borders
                        .iter()
                        .map(|&b| angle_between(angle(c), angle(b)))
                        .fold(f64::INFINITY, f64::min)
                };
                let mut best = spread(remaining[0]);
                for (i, &c) in remaining.iter().enumerate().skip(1) {
                    let s = spread(c);
                    if s > best + 1e-12 {
                        best = s;
                        pick = i;
                    }
                }
            }
            borders.push(remaining.remove(pick));
        }
    }

    let mut contacts = Vec::new();
    let mut via = Vec::new();
    for &b in &borders {
        let bp = topo.position(b);
        let (dx1, dy1) = (bp.x - o.x, bp.y - o.y);
        let candidates: Vec<NodeId> = topo
            .within_hops(b, params.contact_distance)
            .into_iter()
            .filter(|&(c, h)| {
                h == params.contact_distance
                    && c != owner
                    && !contacts.contains(&c)
                    && base.map_or(true, |(v, h0)| topo.hops(v, c).is_some_and(|h| h > h0))
            })
            .map(|(c, _)| c)
            .collect();
        let primary: Vec<NodeId> = candidates
            .iter()
            .copied()
            .filter(|&c| topo.hops(owner, c) == Some(big_r + params.contact_distance))
            .collect();
        let pool = if primary.is_empty() {
            candidates
                .into_iter()
                .filter(|&c| topo.hops(owner, c).is_some_and(|h| h > big_r))
                .collect()
        } else {
            primary
        };
        let alignment = |c: NodeId| {
            let cp = topo.position(c);
            let (dx2, dy2) = (cp.x - bp.x, cp.y - bp.y);
            let norm = (dx1.hypot(dy1)) * (dx2.hypot(dy2));
            if norm > 0.0 {
                (dx1 * dx2 + dy1 * dy2) / norm
            } else {
                0.0
            }
        };
        let mut best: Option<(NodeId, f64)> = None;
        for c in pool {
            let a = alignment(c);
            if best.map_or(true, |(_, ba)| a > ba + 1e-12) {
                best = Some((c, a));
            }
        }
        if let Some((c, _)) = best {
            contacts.push(c);
            via.push(b);
        }
    }
    ContactPlan {
        owner,
        params,
        unfilled: borders.len() - contacts.len(),
        borders,
        contacts,
        via,
    }
}

// ---------------------------------------------------------------------------
// Observations

/// Detector settings for each monitored series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationConfig {
    pub frame_count: DetectorConfig,
    pub busy_time: DetectorConfig,
    pub collision_count: DetectorConfig,
    /// Per-link DATA counts.
    pub link: DetectorConfig,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        let with = |absolute, sigmas| DetectorConfig {
            tolerance: Tolerance {
                absolute,
                relative: 0.25,
                sigmas,
            },
            ..DetectorConfig::default()
        };
        // collisions are small, bursty counts: a 3σ band hides most of
        // what the attack adds at the victim
        Self {
            frame_count: with(2.0, 3.0),
            busy_time: with(0.005, 3.0),
            collision_count: with(1.0, 1.0),
            link: with(1.0, 3.0),
        }
    }
}

impl ObservationConfig {
    pub fn detector(&self, component: Component) -> &DetectorConfig {
        match component {
            Component::FrameCount => &self.frame_count,
            Component::BusyTime => &self.busy_time,
            Component::CollisionCount => &self.collision_count,
        }
    }
}

/// Abnormal DATA activity on one link `(src_addr, dest_addr)` as logged by
/// `observer`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FineSignature {
    pub observer: NodeId,
    pub src_addr: NodeId,
    pub dest_addr: NodeId,
    /// Full per-slot series the monitor ran over.
    pub series: Vec<f64>,
    /// Normal mean when the first abnormal run opened.
    pub baseline: f64,
    pub episodes: Vec<Episode>,
}

impl FineSignature {
    /// Φ: the abnormal samples, in time order.
    pub fn phi(&self) -> Vec<f64> {
        self.episodes
            .iter()
            .flat_map(|e| e.values.iter().copied())
            .collect()
    }

    pub fn t_s(&self) -> u32 {
        self.episodes.first().map_or(0, Episode::t_s)
    }

    pub fn t_l(&self) -> u32 {
        self.episodes.last().map_or(0, Episode::t_l)
    }

    pub fn link(&self) -> (NodeId, NodeId) {
        (self.src_addr, self.dest_addr)
    }

    pub fn abnormal_within(&self, from: u32, to: u32) -> usize {
        self.episodes
            .iter()
            .map(|e| e.samples_within(from, to))
            .sum()
    }

    /// Slot-aligned counts over `[from, to]` minus the baseline.
    pub fn excess_window(&self, from: u32, to: u32) -> Vec<f64> {
        (from..=to)
            .map(|s| self.series.get(s as usize).copied().unwrap_or(0.0) - self.baseline)
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct NodeObservation {
    coarse: [Vec<Episode>; 3],
    links: Vec<FineSignature>,
    frames: Vec<u32>,
}

/// Everything each node logged while the simulation ran.
#[derive(Debug, Clone, Default)]
pub struct Observations {
    slots: u32,
    nodes: Vec<NodeObservation>,
}

fn component_index(c: Component) -> usize {
    match c {
        Component::FrameCount => 0,
        Component::BusyTime => 1,
        Component::CollisionCount => 2,
    }
}

impl Observations {
    pub fn collect(world: &World, config: &ObservationConfig) -> Result<Self, StatsError> {
        let slots = world.completed_slots();
        let mut nodes = Vec::with_capacity(world.topology().len());
        for node in world.topology().nodes() {
            let records = world.activity(node);
            let mut obs = NodeObservation {
                frames: records.iter().map(|r| r.frame_count).collect(),
                ..NodeObservation::default()
            };
            for c in Component::ALL {
                let mut monitor = AbnormalityMonitor::new(*config.detector(c));
                for r in records {
                    monitor.observe(r.slot, r.value(c))?;
                }
                obs.coarse[component_index(c)] = monitor.into_episodes();
            }
            for (&(src, dst), counts) in world.link_series(node) {
                let series: Vec<f64> = (0..slots as usize)
                    .map(|s| counts.get(s).copied().unwrap_or(0) as f64)
                    .collect();
                let mut monitor = AbnormalityMonitor::new(config.link);
                for (s, &x) in series.iter().enumerate() {
                    monitor.observe(s as u32, x)?;
                }
                let episodes = monitor.into_episodes();
                if let Some(first) = episodes.first() {
                    obs.links.push(FineSignature {
                        observer: node,
                        src_addr: src,
                        dest_addr: dst,
                        baseline: first.baseline,
                        series,
                        episodes,
                    });
                }
            }
            nodes.push(obs);
        }
        Ok(Self { slots, nodes })
    }

    /// `nodes` nodes that logged nothing over `slots` slots.
    pub fn quiet(nodes: usize, slots: u32) -> Self {
        Self {
            slots,
            nodes: vec![NodeObservation::default(); nodes],
        }
    }

    pub fn slots(&self) -> u32 {
        self.slots
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn episodes(&self, node: NodeId, component: Component) -> &[Episode] {
        &self.nodes[node.index()].coarse[component_index(component)]
    }

    pub fn links(&self, node: NodeId) -> &[FineSignature] {
        &self.nodes[node.index()].links
    }

    /// Whether `node` sent, received or overheard any frame in `[from, to]`.
    pub fn active_within(&self, node: NodeId, from: u32, to: u32) -> bool {
        let frames = &self.nodes[node.index()].frames;
        (from..=to).any(|s| frames.get(s as usize).is_some_and(|&f| f > 0))
    }

    /// Replaces the logged coarse episodes of `node`, e.g. to model a node
    /// that reports falsely.
    pub fn set_episodes(&mut self, node: NodeId, component: Component, episodes: Vec<Episode>) {
        self.nodes[node.index()].coarse[component_index(component)] = episodes;
    }
}

// ---------------------------------------------------------------------------
// Matching

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// KS significance level.
    pub alpha: f64,
    /// A candidate needs at least this fraction of the reference's sample
    /// count inside the reference window. The KS critical value grows
    /// without bound as the candidate sample shrinks, so short noise runs
    /// would otherwise match anything.
    pub min_overlap: f64,
    pub min_samples: usize,
    /// Majority needed among an observer's active neighbours.
    pub vote_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            min_overlap: 0.5,
            min_samples: 5,
            vote_threshold: 0.5,
        }
    }
}

impl MatchConfig {
    fn required(&self, reference_len: usize) -> usize {
        self.min_samples
            .max((self.min_overlap * reference_len as f64).ceil() as usize)
    }
}

fn normalized(values: &[f64]) -> Option<Vec<f64>> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.is_empty() || !(mean > 0.0) {
        return None;
    }
    Some(values.iter().map(|v| v / mean).collect())
}

/// Victim-side coarse reference: the longest abnormal run of the chosen
/// component, its mean-normalised excess and its time window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reference {
    pub signature: CoarseSignature,
    pub normalized: Vec<f64>,
    pub from: u32,
    pub to: u32,
}

impl Reference {
    pub fn new(signature: CoarseSignature) -> Option<Self> {
        let normalized = normalized(&signature.episode.excess())?;
        Some(Self {
            from: signature.t_s(),
            to: signature.t_l(),
            signature,
            normalized,
        })
    }
}

/// Longest abnormal run at the victim (latest on ties).
pub fn victim_reference(
    obs: &Observations,
    victim: NodeId,
    component: Component,
) -> Option<Reference> {
    let episode = obs
        .episodes(victim, component)
        .iter()
        .filter(|e| e.excess().iter().sum::<f64>() > 0.0)
        .max_by_key(|e| e.len())?;
    Reference::new(CoarseSignature {
        component,
        episode: episode.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoarseMatch {
    pub d_n: f64,
    pub t_s: u32,
    pub t_l: u32,
    pub samples: usize,
}

/// KS matching of a node's abnormal runs against the reference, on
/// mean-normalised excess so that relays and overhearers, which see the
/// same traffic at different frame multiples, stay comparable. Runs are
/// clipped to the reference window and pooled.
pub fn coarse_match(
    episodes: &[Episode],
    reference: &Reference,
    config: &MatchConfig,
) -> Option<CoarseMatch> {
    let mut excess = Vec::new();
    let mut slots = Vec::new();
    for e in episodes {
        if let Some(w) = e.window(reference.from, reference.to) {
            excess.extend(w.excess());
            slots.extend(w.slots);
        }
    }
    if excess.len() < config.required(reference.normalized.len()) {
        return None;
    }
    let candidate = normalized(&excess)?;
    let d_n = ks_statistic(&reference.normalized, &candidate).ok()?;
    if !ks_test(
        d_n,
        reference.normalized.len(),
        candidate.len(),
        config.alpha,
    )
    .accepted()
    {
        return None;
    }
    Some(CoarseMatch {
        d_n,
        t_s: *slots.iter().min()?,
        t_l: *slots.iter().max()?,
        samples: candidate.len(),
    })
}

/// Local majority vote: some matching observer must be backed by more than
/// `threshold` of itself plus its active neighbours inside the region.
pub fn majority_vote(
    topo: &Topology,
    obs: &Observations,
    region: &[NodeId],
    matched: &[NodeId],
    window: (u32, u32),
    threshold: f64,
) -> bool {
    let in_region: BTreeSet<NodeId> = region.iter().copied().collect();
    let matched_set: BTreeSet<NodeId> = matched.iter().copied().collect();
    matched.iter().any(|&o| {
        let (mut agree, mut active) = (1usize, 1usize);
        for &n in topo.neighbors(o) {
            if in_region.contains(&n) && obs.active_within(n, window.0, window.1) {
                active += 1;
                if matched_set.contains(&n) {
                    agree += 1;
                }
            }
        }
        agree as f64 / active as f64 > threshold
    })
}

// ---------------------------------------------------------------------------
// Sessions and message accounting

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    ContactQuery,
    VicinityQuery,
    Response,
    Report,
    Continue,
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageKind::ContactQuery => "contact_query",
            MessageKind::VicinityQuery => "vicinity_query",
            MessageKind::Response => "response",
            MessageKind::Report => "report",
            MessageKind::Continue => "continue",
        })
    }
}

/// One transmitted protocol message. Broadcasts have no `dst` and print
/// `*`. Displayed as `time src dst kind sn depth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MessageRecord {
    pub time: u64,
    pub src: NodeId,
    pub dst: Option<NodeId>,
    pub kind: MessageKind,
    pub sn: u32,
    pub depth: u32,
}

impl fmt::Display for MessageRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dst {
            Some(d) => write!(
                f,
                "{} {} {} {} {} {}",
                self.time, self.src, d, self.kind, self.sn, self.depth
            ),
            None => write!(
                f,
                "{} {} * {} {} {}",
                self.time, self.src, self.kind, self.sn, self.depth
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overhead {
    pub tx: u64,
    pub rx: u64,
    /// Nodes that processed a query (duplicates excluded).
    pub processing: u64,
}

impl Overhead {
    pub fn messages(&self) -> u64 {
        self.tx + self.rx
    }
}

/// Per-session protocol state: duplicate suppression on `(SN, V)` and
/// overhead accounting. Every hop of a unicast and every broadcast counts
/// one transmission; every reception counts once.
#[derive(Debug, Clone)]
pub struct Session<'a> {
    topo: &'a Topology,
    pub victim: NodeId,
    pub sn: u32,
    vicinity_done: Vec<bool>,
    contact_done: Vec<bool>,
    overhead: Overhead,
    log: Vec<MessageRecord>,
    clock: u64,
}

impl<'a> Session<'a> {
    pub fn new(topo: &'a Topology, victim: NodeId, sn: u32) -> Self {
        Self {
            topo,
            victim,
            sn,
            vicinity_done: vec![false; topo.len()],
            contact_done: vec![false; topo.len()],
            overhead: Overhead::default(),
            log: Vec::new(),
            clock: 0,
        }
    }

    pub fn topology(&self) -> &'a Topology {
        self.topo
    }

    pub fn overhead(&self) -> Overhead {
        self.overhead
    }

    pub fn log(&self) -> &[MessageRecord] {
        &self.log
    }

    pub fn into_log(self) -> Vec<MessageRecord> {
        self.log
    }

    fn record(&mut self, src: NodeId, dst: Option<NodeId>, kind: MessageKind, depth: u32) {
        self.log.push(MessageRecord {
            time: self.clock,
            src,
            dst,
            kind,
            sn: self.sn,
            depth,
        });
        self.clock += 1;
    }

    /// Hop-by-hop unicast along the routing table. Returns false if `dst`
    /// is unreachable.
    pub fn unicast(&mut self, src: NodeId, dst: NodeId, kind: MessageKind, depth: u32) -> bool {
        let path = self.topo.shortest_path(src, dst);
        if path.is_empty() {
            return false;
        }
        for hop in path.windows(2) {
            self.overhead.tx += 1;
            self.overhead.rx += 1;
            self.record(hop[0], Some(hop[1]), kind, depth);
        }
        true
    }

    /// Marks `contact` as having processed the contact query; false for a
    /// duplicate, which the contact drops.
    pub fn accept_contact(&mut self, contact: NodeId) -> bool {
        !std::mem::replace(&mut self.contact_done[contact.index()], true)
    }

    pub fn processed(&self, node: NodeId) -> bool {
        self.vicinity_done[node.index()]
    }

    /// TTL-scoped broadcast of a query from `center`. Nodes that already
    /// processed this session's query drop it without rebroadcasting.
    /// Returns the nodes that processed it now, with their hop distance.
    pub fn scoped_flood(&mut self, center: NodeId, radius: u32, depth: u32) -> Vec<(NodeId, u32)> {
        self.filtered_flood(center, radius, depth, |_, _| true)
    }

    /// Scoped flood in which a receiving node rebroadcasts only if
    /// `forwards(node, hops)` says so; the center always broadcasts. ATTENTION's vicinity
    /// queries travel only through nodes that observed the signature.
    pub fn filtered_flood<F>(
        &mut self,
        center: NodeId,
        radius: u32,
        depth: u32,
        mut forwards: F,
    ) -> Vec<(NodeId, u32)>
    where
        F: FnMut(NodeId, u32) -> bool,
    {
        let mut fresh = Vec::new();
        if !std::mem::replace(&mut self.vicinity_done[center.index()], true) {
            fresh.push((center, 0));
            self.overhead.processing += 1;
        }
        if radius == 0 {
            return fresh;
        }
        let mut queue = std::collections::VecDeque::from([(center, 0u32)]);
        while let Some((node, dist)) = queue.pop_front() {
            self.overhead.tx += 1;
            self.record(node, None, MessageKind::VicinityQuery, depth);
            for &nb in self.topo.neighbors(node) {
                self.overhead.rx += 1;
                if !self.vicinity_done[nb.index()] {
                    self.vicinity_done[nb.index()] = true;
                    self.overhead.processing += 1;
                    fresh.push((nb, dist + 1));
                    if dist + 1 < radius && forwards(nb, dist + 1) {
                        queue.push_back((nb, dist + 1));
                    }
                }
            }
        }
        fresh
    }
}

// ---------------------------------------------------------------------------
// Coarse traceback

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TracebackConfig {
    pub plan: PlanParams,
    pub matching: MatchConfig,
    pub component: Component,
    /// Largest candidate set matched exhaustively.
    pub k_max: usize,
    pub sn: u32,
}

impl Default for TracebackConfig {
    fn default() -> Self {
        Self {
            plan: PlanParams::default(),
            matching: MatchConfig::default(),
            component: Component::FrameCount,
            k_max: 12,
            sn: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObserverMatch {
    pub node: NodeId,
    pub d_n: f64,
    pub t_s: u32,
    pub t_l: u32,
    /// Hop distance to the querying contact.
    pub hops: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub contact: NodeId,
    /// All matching observers, best first.
    pub observers: Vec<ObserverMatch>,
    pub d_n: Option<f64>,
    pub age: Option<(u32, u32)>,
    pub relative_hops: Option<u32>,
}

impl MatchReport {
    fn from_observers(contact: NodeId, mut observers: Vec<ObserverMatch>) -> Self {
        observers.sort_by(|a, b| a.d_n.total_cmp(&b.d_n).then(a.node.cmp(&b.node)));
        let age = observers
            .iter()
            .map(|o| o.t_s)
            .min()
            .zip(observers.iter().map(|o| o.t_l).max());
        Self {
            contact,
            d_n: observers.first().map(|o| o.d_n),
            relative_hops: observers.first().map(|o| o.hops),
            age,
            observers,
        }
    }
}

/// Outcome of one contact's vicinity query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionReport {
    pub contact: NodeId,
    pub level: u32,
    pub parent: Option<NodeId>,
    pub report: MatchReport,
    /// Nodes that processed the query, with hop distance to the contact.
    pub region: Vec<(NodeId, u32)>,
    pub on_path: bool,
}

impl RegionReport {
    pub fn region_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.region.iter().map(|&(n, _)| n)
    }
}

/// The contact queries its vicinity. Every node that receives the query runs
/// the KS test against the reference; matching nodes answer and relay the
/// query onward. The region is on path if the local majority vote passes.
pub fn vicinity_query(
    session: &mut Session<'_>,
    obs: &Observations,
    contact: NodeId,
    reference: &Reference,
    config: &TracebackConfig,
    depth: u32,
) -> (MatchReport, Vec<(NodeId, u32)>, bool) {
    let mut matches = BTreeMap::new();
    let region = session.filtered_flood(contact, config.plan.vicinity_radius, depth, |n, hops| {
        let episodes = obs.episodes(n, config.component);
        let m = coarse_match(episodes, reference, &config.matching);
        // The contact's first ring always relays, and past it anything abnormal
        // during the attack window does, so a contact a couple of hops off the
        // corridor still reaches it.
        let relays = hops == 1
            || m.is_some()
            || episodes
                .iter()
                .any(|e| e.samples_within(reference.from, reference.to) > 0);
        if let Some(m) = m {
            matches.insert(n, m);
        }
        relays
    });
    let mut observers = Vec::new();
    for &(n, hops) in &region {
        let m = matches.remove(&n).or_else(|| {
            coarse_match(
                obs.episodes(n, config.component),
                reference,
                &config.matching,
            )
        });
        if let Some(m) = m {
            observers.push(ObserverMatch {
                node: n,
                d_n: m.d_n,
                t_s: m.t_s,
                t_l: m.t_l,
                hops,
            });
            if n != contact {
                session.unicast(n, contact, MessageKind::Response, depth);
            }
        }
    }
    let nodes: Vec<NodeId> = region.iter().map(|&(n, _)| n).collect();
    let matched: Vec<NodeId> = observers.iter().map(|o| o.node).collect();
    let on_path = majority_vote(
        session.topology(),
        obs,
        &nodes,
        &matched,
        (reference.from, reference.to),
        config.matching.vote_threshold,
    );
    (
        MatchReport::from_observers(contact, observers),
        region,
        on_path,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoarseTrace {
    pub victim: NodeId,
    pub reference: Reference,
    /// Victim's own region first, then every queried contact in order.
    pub regions: Vec<RegionReport>,
    /// Contacts from level 1 to the deepest on-path contact.
    pub path: Vec<NodeId>,
    /// Center of the origin region (the victim if only its own vicinity
    /// matched).
    pub origin: NodeId,
    pub overhead: Overhead,
    pub log: Vec<MessageRecord>,
}

/// JSON-friendly summary of a traceback session.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub victim: NodeId,
    pub path: Vec<NodeId>,
    pub origin: Vec<NodeId>,
    pub d_n: Vec<Option<f64>>,
    pub messages_tx: u64,
    pub messages_rx: u64,
}

impl CoarseTrace {
    pub fn region(&self, contact: NodeId) -> Option<&RegionReport> {
        self.regions.iter().find(|r| r.contact == contact)
    }

    pub fn record(&self) -> TraceRecord {
        TraceRecord {
            victim: self.victim,
            path: self.path.clone(),
            origin: vec![self.origin],
            d_n: self
                .path
                .iter()
                .map(|&c| self.region(c).and_then(|r| r.report.d_n))
                .collect(),
            messages_tx: self.overhead.tx,
            messages_rx: self.overhead.rx,
        }
    }
}

/// Level-by-level expansion shared by the coarse and fine searches. The
/// `probe` runs one contact's vicinity query and reports whether the region
/// is on path; only on-path contacts expand further.
fn expand_search<F>(
    session: &mut Session<'_>,
    config: &TracebackConfig,
    mut probe: F,
) -> Vec<(NodeId, u32, Option<NodeId>, bool)>
where
    F: FnMut(&mut Session<'_>, NodeId, u32) -> bool,
{
    let victim = session.victim;
    let d = config.plan.search_depth;
    session.accept_contact(victim);
    let mut visited = vec![(victim, 0, None, probe(session, victim, d))];
    let mut frontier = vec![victim];
    for level in 1..=d {
        let depth = d - level;
        let mut next = Vec::new();
        for &owner in &frontier {
            let plan = select_contacts(session.topology(), owner, config.plan, Some(victim));
            for (&c, &b) in plan.contacts.iter().zip(&plan.via) {
                session.unicast(owner, b, MessageKind::ContactQuery, depth);
                session.unicast(b, c, MessageKind::ContactQuery, depth);
                if !session.accept_contact(c) {
                    continue;
                }
                let on_path = probe(session, c, depth);
                if on_path {
                    next.push(c);
                }
                visited.push((c, level, Some(owner), on_path));
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    visited
}

/// Picks the deepest on-path contact (then farthest from the victim, then
/// smallest `score`, then lowest id) and returns its ancestor chain.
fn deepest_chain<S: Fn(NodeId) -> f64>(
    topo: &Topology,
    victim: NodeId,
    visited: &[(NodeId, u32, Option<NodeId>, bool)],
    score: S,
) -> Option<Vec<NodeId>> {
    let best = visited.iter().filter(|v| v.3 && v.1 > 0).max_by(|a, b| {
        a.1.cmp(&b.1)
            .then(topo.hops(victim, a.0).cmp(&topo.hops(victim, b.0)))
            .then(score(b.0).total_cmp(&score(a.0)))
            .then(b.0.cmp(&a.0))
    })?;
    let parent: BTreeMap<NodeId, Option<NodeId>> = visited.iter().map(|v| (v.0, v.2)).collect();
    let mut chain = vec![best.0];
    let mut at = best.2;
    while let Some(p) = at {
        if p == victim {
            break;
        }
        chain.push(p);
        at = parent.get(&p).copied().flatten();
    }
    chain.reverse();
    Some(chain)
}

/// Coarse-grained DoS traceback.
pub fn trace_dos_coarse(
    topo: &Topology,
    obs: &Observations,
    victim: NodeId,
    config: &TracebackConfig,
) -> Result<CoarseTrace, TraceError> {
    let reference =
        victim_reference(obs, victim, config.component).ok_or(TraceError::NoSignature(victim))?;
    trace_with_reference(topo, obs, victim, reference, config)
}

/// Coarse traceback against an explicit reference signature.
pub fn trace_with_reference(
    topo: &Topology,
    obs: &Observations,
    victim: NodeId,
    reference: Reference,
    config: &TracebackConfig,
) -> Result<CoarseTrace, TraceError> {
    let mut session = Session::new(topo, victim, config.sn);
    let mut reports: BTreeMap<NodeId, (MatchReport, Vec<(NodeId, u32)>)> = BTreeMap::new();
    let visited = expand_search(&mut session, config, |s, contact, depth| {
        let (report, region, on_path) = vicinity_query(s, obs, contact, &reference, config, depth);
        if on_path && contact != victim {
            s.unicast(contact, victim, MessageKind::Report, depth);
        }
        reports.insert(contact, (report, region));
        on_path
    });
    let regions: Vec<RegionReport> = visited
        .iter()
        .map(|&(contact, level, parent, on_path)| {
            let (report, region) = reports
                .remove(&contact)
                .expect("every visited contact was probed");
            RegionReport {
                contact,
                level,
                parent,
                report,
                region,
                on_path,
            }
        })
        .collect();
    let d_of = |c: NodeId| {
        regions
            .iter()
            .find(|r| r.contact == c)
            .and_then(|r| r.report.d_n)
            .unwrap_or(f64::INFINITY)
    };
    let (path, origin) = match deepest_chain(topo, victim, &visited, d_of) {
        Some(chain) => {
            let origin = *chain.last().expect("chains are non-empty");
            (chain, origin)
        }
        None if regions[0].on_path => (Vec::new(), victim),
        None => return Err(TraceError::NoMatch),
    };
    Ok(CoarseTrace {
        victim,
        reference,
        regions,
        path,
        origin,
        overhead: session.overhead(),
        log: session.into_log(),
    })
}

// ---------------------------------------------------------------------------
// Fine-grained traceback

/// S = Σ C(K, i) for i = 1..K, i.e. 2^K − 1.
pub fn combination_count(k: u32) -> u64 {
    assert!((1..64).contains(&k), "K must be in 1..64");
    (1u64 << k) - 1
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetMatch {
    /// Indices into the candidate list, ascending.
    pub members: Vec<usize>,
    pub d_n: f64,
}

fn subset_sum(candidates: &[Vec<f64>], members: &[usize], len: usize) -> Vec<f64> {
    let mut sum = vec![0.0; len];
    for &m in members {
        for (s, v) in sum.iter_mut().zip(&candidates[m]) {
            *s += v;
        }
    }
    sum
}

fn better(d: f64, members: &[usize], best: &SubsetMatch) -> bool {
    d < best.d_n - 1e-12
        || ((d - best.d_n).abs() <= 1e-12
            && (members.len(), members) < (best.members.len(), best.members.as_slice()))
}

/// Exhaustive search over every non-empty subset of `candidates` for the
/// slot-wise sum closest to `xi` in KS distance. Ties go to the smaller
/// subset, then the lexicographically smaller index list; callers order
/// candidates by node id.
pub fn combinational_match(
    candidates: &[Vec<f64>],
    xi: &[f64],
    k_max: usize,
) -> Result<SubsetMatch, TraceError> {
    let k = candidates.len();
    if k == 0 {
        return Err(TraceError::NoMatch);
    }
    if k > k_max || k >= 64 {
        return Err(TraceError::CombinationExplosion { k, k_max });
    }
    let mut best = SubsetMatch {
        members: Vec::new(),
        d_n: f64::INFINITY,
    };
    for mask in 1u64..(1u64 << k) {
        let members: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
        let sum = subset_sum(candidates, &members, xi.len());
        let d = ks_statistic(xi, &sum)?;
        if better(d, &members, &best) {
            best = SubsetMatch { members, d_n: d };
        }
    }
    Ok(best)
}

/// Forward selection: repeatedly add the candidate that lowers the KS
/// distance most; stop when nothing improves.
pub fn greedy_match(candidates: &[Vec<f64>], xi: &[f64]) -> Result<SubsetMatch, TraceError> {
    if candidates.is_empty() {
        return Err(TraceError::NoMatch);
    }
    let mut best = SubsetMatch {
        members: Vec::new(),
        d_n: f64::INFINITY,
    };
    loop {
        let mut step: Option<SubsetMatch> = None;
        for i in 0..candidates.len() {
            if best.members.contains(&i) {
                continue;
            }
            let mut members = best.members.clone();
            members.push(i);
            members.sort_unstable();
            let d = ks_statistic(xi, &subset_sum(candidates, &members, xi.len()))?;
            if step.as_ref().map_or(true, |s| better(d, &members, s)) {
                step = Some(SubsetMatch { members, d_n: d });
            }
        }
        match step {
            Some(s) if s.d_n < best.d_n - 1e-12 => best = s,
            _ => return Ok(best),
        }
    }
}

fn best_subset(
    candidates: &[Vec<f64>],
    xi: &[f64],
    k_max: usize,
) -> Result<SubsetMatch, TraceError> {
    match combinational_match(candidates, xi, k_max) {
        Err(TraceError::CombinationExplosion { .. }) => greedy_match(candidates, xi),
        other => other,
    }
}

fn ks_accepts(a: &[f64], b: &[f64], alpha: f64) -> Result<(f64, bool), TraceError> {
    let d = ks_statistic(a, b)?;
    Ok((d, ks_test(d, a.len(), b.len(), alpha).accepted()))
}

/// KS on mean-normalised series. Relays drop frames under congestion, so an
/// upstream link carries the same pattern at a higher level; continuity is a
/// question of shape. Series with no positive mass never match.
fn shape_accepts(a: &[f64], b: &[f64], alpha: f64) -> Result<bool, TraceError> {
    match (normalized(a), normalized(b)) {
        (Some(a), Some(b)) => Ok(ks_accepts(&a, &b, alpha)?.1),
        _ => Ok(false),
    }
}

/// One representative signature per link: the one with the most abnormal
/// samples in the window, lowest observer id on ties.
fn representatives<'s>(
    entries: impl IntoIterator<Item = &'s FineSignature>,
    window: (u32, u32),
) -> BTreeMap<(NodeId, NodeId), &'s FineSignature> {
    let mut map: BTreeMap<(NodeId, NodeId), &FineSignature> = BTreeMap::new();
    for e in entries {
        let n = e.abnormal_within(window.0, window.1);
        if n == 0 {
            continue;
        }
        map.entry(e.link())
            .and_modify(|cur| {
                let m = cur.abnormal_within(window.0, window.1);
                if n > m || (n == m && e.observer < cur.observer) {
                    *cur = e;
                }
            })
            .or_insert(e);
    }
    map
}

/// Chains of links that relay into the victim: link `j` feeds link `i` when
/// `j.dest == i.src` and their mean-normalised Φ over the window pass the KS test. Links
/// with no chain ending at the victim are discarded. Each chain runs from
/// its most upstream link to the victim.
pub fn relay_continuity(
    entries: &[FineSignature],
    victim: NodeId,
    window: (u32, u32),
    alpha: f64,
) -> Result<Vec<Vec<(NodeId, NodeId)>>, TraceError> {
    let reps = representatives(entries, window);
    let mut chains = Vec::new();
    let mut stack: Vec<Vec<(NodeId, NodeId)>> = reps
        .keys()
        .filter(|l| l.1 == victim)
        .map(|&l| vec![l])
        .collect();
    while let Some(chain) = stack.pop() {
        let head = chain[0];
        let head_phi = reps[&head].excess_window(window.0, window.1);
        let on_chain: BTreeSet<NodeId> = chain.iter().flat_map(|l| [l.0, l.1]).collect();
        let mut extended = false;
        for (&link, sig) in &reps {
            if link.1 != head.0 || on_chain.contains(&link.0) {
                continue;
            }
            if shape_accepts(&sig.excess_window(window.0, window.1), &head_phi, alpha)? {
                let mut longer = vec![link];
                longer.extend_from_slice(&chain);
                stack.push(longer);
                extended = true;
            }
        }
        if !extended {
            chains.push(chain);
        }
    }
    chains.sort();
    Ok(chains)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeEdge {
    pub src: NodeId,
    pub dest: NodeId,
    /// KS distance of the branch combination this link belongs to.
    pub d_n: f64,
    pub observer: NodeId,
}

/// Attack tree rooted at the victim.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AttackTree {
    pub edges: Vec<TreeEdge>,
    /// Traced origins (most upstream senders), ascending.
    pub leaves: Vec<NodeId>,
}

impl AttackTree {
    pub fn contains_link(&self, link: (NodeId, NodeId)) -> bool {
        self.edges.iter().any(|e| (e.src, e.dest) == link)
    }
}

/// Incoming links at the victim that carry the attack: abnormal links
/// ending at the victim whose abnormal sample count is comparable to the
/// strongest one. Returns them with the window spanned by the strongest.
pub fn victim_fine_references(
    obs: &Observations,
    victim: NodeId,
    config: &MatchConfig,
) -> Option<(Vec<FineSignature>, (u32, u32))> {
    let incoming: Vec<&FineSignature> = obs
        .links(victim)
        .iter()
        .filter(|s| s.dest_addr == victim && s.phi().len() >= config.min_samples)
        .collect();
    let strongest = incoming.iter().max_by(|a, b| {
        a.phi()
            .len()
            .cmp(&b.phi().len())
            .then(b.src_addr.cmp(&a.src_addr))
    })?;
    let window = (strongest.t_s(), strongest.t_l());
    let span = (window.1 - window.0 + 1) as usize;
    let need = config.required(span);
    let refs: Vec<FineSignature> = incoming
        .iter()
        .filter(|s| s.abnormal_within(window.0, window.1) >= need)
        .map(|s| (*s).clone())
        .collect();
    Some((refs, window))
}

/// Builds the attack tree from the gathered link signatures. Each branch
/// signature is matched against the links entering its upstream end; the
/// winning combination becomes the new branch signatures.
pub fn build_attack_tree(
    entries: &[FineSignature],
    roots: &[FineSignature],
    victim: NodeId,
    window: (u32, u32),
    alpha: f64,
    k_max: usize,
) -> Result<AttackTree, TraceError> {
    let reps = representatives(entries.iter().chain(roots), window);
    let mut tree = AttackTree::default();
    let mut visited: BTreeSet<NodeId> = BTreeSet::from([victim]);
    let mut stack: Vec<((NodeId, NodeId), f64)> =
        roots.iter().rev().map(|r| (r.link(), 0.0)).collect();
    let mut leaves = BTreeSet::new();
    while let Some((link, d_n)) = stack.pop() {
        let Some(sig) = reps.get(&link) else { continue };
        if !visited.insert(link.0) {
            continue;
        }
        tree.edges.push(TreeEdge {
            src: link.0,
            dest: link.1,
            d_n,
            observer: sig.observer,
        });
        let u = link.0;
        let candidates: Vec<(NodeId, NodeId)> = reps
            .keys()
            .filter(|l| l.1 == u && !visited.contains(&l.0))
            .copied()
            .collect();
        if candidates.is_empty() {
            leaves.insert(u);
            continue;
        }
        let xi = sig.excess_window(window.0, window.1);
        let series: Vec<Vec<f64>> = candidates
            .iter()
            .map(|l| reps[l].excess_window(window.0, window.1))
            .collect();
        let best = best_subset(&series, &xi, k_max)?;
        let sum = subset_sum(&series, &best.members, xi.len());
        if shape_accepts(&xi, &sum, alpha)? {
            for &m in best.members.iter().rev() {
                stack.push((candidates[m], best.d_n));
            }
        } else {
            leaves.insert(u);
        }
    }
    tree.leaves = leaves.into_iter().collect();
    Ok(tree)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FineTrace {
    pub victim: NodeId,
    pub window: (u32, u32),
    pub tree: AttackTree,
    /// Every queried contact with its level, parent and whether its region
    /// contributed links to the tree.
    pub contacts: Vec<(NodeId, u32, Option<NodeId>, bool)>,
    /// Contributing contacts in search order.
    pub path: Vec<NodeId>,
    pub overhead: Overhead,
    pub log: Vec<MessageRecord>,
}

impl FineTrace {
    pub fn record(&self) -> TraceRecord {
        TraceRecord {
            victim: self.victim,
            path: self.path.clone(),
            origin: self.tree.leaves.clone(),
            d_n: self.tree.edges.iter().map(|e| Some(e.d_n)).collect(),
            messages_tx: self.overhead.tx,
            messages_rx: self.overhead.rx,
        }
    }
}

/// Fine-grained (link-level) traceback. Handles a single attacker as a
/// degenerate tree.
pub fn trace_ddos_fine(
    topo: &Topology,
    obs: &Observations,
    victim: NodeId,
    config: &TracebackConfig,
) -> Result<FineTrace, TraceError> {
    let (roots, window) = victim_fine_references(obs, victim, &config.matching)
        .ok_or(TraceError::NoSignature(victim))?;
    if roots.is_empty() {
        return Err(TraceError::NoSignature(victim));
    }
    let alpha = config.matching.alpha;
    let mut session = Session::new(topo, victim, config.sn);
    let mut pool: Vec<FineSignature> = Vec::new();
    let mut contributed: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    let mut tree = AttackTree::default();
    let mut failure: Option<TraceError> = None;

    let visited = expand_search(&mut session, config, |s, contact, depth| {
        if failure.is_some() {
            return false;
        }
        let region = s.filtered_flood(contact, config.plan.vicinity_radius, depth, |n, hops| {
            hops == 1
                || obs
                    .links(n)
                    .iter()
                    .any(|sig| sig.abnormal_within(window.0, window.1) > 0)
        });
        let mut region_links = BTreeSet::new();
        for &(n, _) in &region {
            let mut holds = false;
            for sig in obs.links(n) {
                if sig.abnormal_within(window.0, window.1) > 0 {
                    pool.push(sig.clone());
                    region_links.insert(sig.link());
                    holds = true;
                }
            }
            if holds && n != contact {
                s.unicast(n, contact, MessageKind::Response, depth);
            }
        }
        if region_links.is_empty() {
            return false;
        }
        if contact != victim {
            s.unicast(contact, victim, MessageKind::Report, depth);
        }
        match build_attack_tree(&pool, &roots, victim, window, alpha, config.k_max) {
            Ok(t) => tree = t,
            Err(e) => {
                failure = Some(e);
                return false;
            }
        }
        let fresh: Vec<(NodeId, NodeId)> = tree
            .edges
            .iter()
            .map(|e| (e.src, e.dest))
            .filter(|l| region_links.contains(l) && !contributed.contains(l))
            .collect();
        let on_path = !fresh.is_empty();
        contributed.extend(fresh);
        if on_path && contact != victim {
            s.unicast(victim, contact, MessageKind::Continue, depth);
        }
        on_path
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if tree.edges.is_empty() {
        return Err(TraceError::NoMatch);
    }
    let path = visited
        .iter()
        .filter(|v| v.3 && v.1 > 0)
        .map(|v| v.0)
        .collect();
    Ok(FineTrace {
        victim,
        window,
        tree,
        contacts: visited,
        path,
        overhead: session.overhead(),
        log: session.into_log(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{Placement, WorldGeometry};

    fn line(n: usize) -> Topology {
        let g = WorldGeometry {
            width: 100.0 * n as f64,
            height: 200.0,
            tx_range: 150.0,
        };
        Topology::build(1, g, n, Placement::Line { spacing: 100.0 })
    }

    #[test]
    fn isolated_owner_has_empty_plan() {
        let g = WorldGeometry {
            width: 2000.0,
            height: 2000.0,
            tx_range: 150.0,
        };
        let topo = Topology::build(1, g, 3, Placement::Line { spacing: 500.0 });
        let plan = select_contacts(&topo, NodeId(0), PlanParams::default(), None);
        assert!(plan.borders.is_empty() && plan.contacts.is_empty());
    }

    #[test]
    fn line_has_at_most_two_borders() {
        let topo = line(30);
        let plan = select_contacts(&topo, NodeId(15), PlanParams::default(), None);
        assert_eq!(plan.borders, vec![NodeId(12), NodeId(18)]);
        assert_eq!(plan.contacts, vec![NodeId(9), NodeId(21)]);
        let end = select_contacts(&topo, NodeId(0), PlanParams::default(), None);
        assert_eq!(end.contacts, vec![NodeId(6)]);
    }

    #[test]
    fn outward_plan_never_turns_back() {
        let topo = line(30);
        let plan = select_contacts(&topo, NodeId(6), PlanParams::default(), Some(NodeId(0)));
        assert_eq!(plan.contacts, vec![NodeId(12)]);
    }

    #[test]
    fn dense_world_yields_full_plan_at_six_hops() {
        let g = WorldGeometry {
            width: 2200.0,
            height: 2200.0,
            tx_range: 150.0,
        };
        let topo = Topology::build(4, g, 900, Placement::UniformRandom);
        let center = topo
            .nodes()
            .min_by(|&a, &b| {
                let d = |n: NodeId| {
                    let p = topo.position(n);
                    (p.x - 1100.0).hypot(p.y - 1100.0)
                };
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        let plan = select_contacts(&topo, center, PlanParams::default(), None);
        assert_eq!(plan.contacts.len(), 6);
        for (&c, &b) in plan.contacts.iter().zip(&plan.via) {
            assert_eq!(topo.hops(center, c), Some(6));
            assert_eq!(topo.hops(center, b), Some(3));
            assert_eq!(topo.hops(b, c), Some(3));
        }
        let unique: BTreeSet<_> = plan.contacts.iter().collect();
        assert_eq!(unique.len(), 6);
    }

    #[test]
    fn combination_counts() {
        assert_eq!(combination_count(1), 1);
        assert_eq!(combination_count(3), 7);
        assert_eq!(combination_count(10), 1023);
    }

    #[test]
    fn singleton_equal_to_xi_wins() {
        let xi = vec![3.0, 5.0, 4.0, 6.0];
        let m = combinational_match(&[xi.clone()], &xi, 12).unwrap();
        assert_eq!(m.members, vec![0]);
        assert_eq!(m.d_n, 0.0);
    }

    #[test]
    fn pair_summing_to_xi_wins() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = vec![6.0, 1.0, 5.0, 2.0, 4.0, 3.0];
        let noise = vec![0.5, 0.1, 0.3, 0.2, 0.4, 0.6];
        let xi: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let candidates = vec![a, b, noise];
        let m = combinational_match(&candidates, &xi, 12).unwrap();
        assert_eq!(m.members, vec![0, 1]);
        // exhaustive oracle: no subset is strictly closer
        for mask in 1u32..8 {
            let members: Vec<usize> = (0..3).filter(|i| mask >> i & 1 == 1).collect();
            let d = ks_statistic(&xi, &subset_sum(&candidates, &members, xi.len())).unwrap();
            assert!(d >= m.d_n);
        }
    }

    #[test]
    fn zero_candidates_still_report_distance() {
        let xi = vec![5.0; 8];
        let m = combinational_match(&[vec![0.0; 8], vec![0.0; 8]], &xi, 12).unwrap();
        assert_eq!(m.members, vec![0]);
        assert_eq!(m.d_n, 1.0);
        assert!(!ks_test(m.d_n, 8, 8, 0.05).accepted());
    }

    #[test]
    fn explosion_falls_back_to_greedy() {
        let xi: Vec<f64> = (0..10).map(|i| (i * 3 % 7) as f64 + 10.0).collect();
        let candidates: Vec<Vec<f64>> = (0..14)
            .map(|k| xi.iter().map(|v| v / (k + 2) as f64).collect())
            .collect();
        assert!(matches!(
            combinational_match(&candidates, &xi, 12),
            Err(TraceError::CombinationExplosion { k: 14, k_max: 12 })
        ));
        let g = best_subset(&candidates, &xi, 12).unwrap();
        assert!(!g.members.is_empty());
        assert!(g.d_n < 1.0);
    }

    fn sig(observer: u32, src: u32, dst: u32, series: Vec<f64>) -> FineSignature {
        let slots: Vec<u32> = (0..series.len() as u32).collect();
        FineSignature {
            observer: NodeId(observer),
            src_addr: NodeId(src),
            dest_addr: NodeId(dst),
            episodes: vec![Episode {
                slots,
                values: series.clone(),
                baseline: 0.0,
            }],
            series,
            baseline: 0.0,
        }
    }

    fn attack_series(seed: u64) -> Vec<f64> {
        (0..20).map(|i| (90 + (i * 7 + seed) % 23) as f64).collect()
    }

    #[test]
    fn relay_continuity_chains_to_victim() {
        let v = 9;
        let phi = attack_series(1);
        let entries = vec![
            sig(1, 1, 2, phi.clone()),
            sig(2, 2, v, phi.clone()),
            sig(5, 5, 6, attack_series(4)),
        ];
        let chains = relay_continuity(&entries, NodeId(v), (0, 19), 0.05).unwrap();
        assert_eq!(
            chains,
            vec![vec![(NodeId(1), NodeId(2)), (NodeId(2), NodeId(v))]]
        );
        let single = relay_continuity(&entries[1..2], NodeId(v), (0, 19), 0.05).unwrap();
        assert_eq!(single, vec![vec![(NodeId(2), NodeId(v))]]);
    }

    #[test]
    fn broken_chain_keeps_only_victim_link() {
        let phi = attack_series(2);
        let entries = vec![sig(1, 1, 2, phi.clone()), sig(3, 3, 9, phi)];
        let chains = relay_continuity(&entries, NodeId(9), (0, 19), 0.05).unwrap();
        assert_eq!(chains, vec![vec![(NodeId(3), NodeId(9))]]);
    }

    #[test]
    fn merge_one_hop_before_victim_gives_two_leaves() {
        let a = attack_series(3);
        let b: Vec<f64> = attack_series(11).iter().map(|x| x * 0.8).collect();
        let merged: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let bg: Vec<f64> = (0..20).map(|i| 5.0 + (i % 3) as f64).collect();
        let entries = vec![
            sig(1, 1, 3, a.clone()),
            sig(2, 2, 3, b),
            sig(7, 7, 3, bg),
            sig(0, 0, 1, a),
        ];
        let roots = vec![sig(9, 3, 9, merged)];
        let tree = build_attack_tree(&entries, &roots, NodeId(9), (0, 19), 0.05, 12).unwrap();
        assert_eq!(tree.leaves, vec![NodeId(0), NodeId(2)]);
        assert!(tree.contains_link((NodeId(1), NodeId(3))));
        assert!(tree.contains_link((NodeId(2), NodeId(3))));
        assert!(!tree.contains_link((NodeId(7), NodeId(3))));
    }

    #[test]
    fn session_deduplicates_flood() {
        let topo = line(10);
        let mut s = Session::new(&topo, NodeId(0), 7);
        let all = s.scoped_flood(NodeId(0), u32::MAX, 0);
        assert_eq!(all.len(), 10);
        assert_eq!(s.overhead().processing, 10);
        // every node rebroadcasts once, every neighbour hears it
        assert_eq!(s.overhead().tx, 10);
        assert_eq!(s.overhead().rx, 18);
        let again = s.scoped_flood(NodeId(4), 3, 0);
        assert!(again.is_empty());
        assert_eq!(s.overhead().processing, 10);
        assert!(s.log()[0]
            .to_string()
            .starts_with("0 0 * vicinity_query 7 0"));
    }

    #[test]
    fn isolated_victim_flood_is_one_event() {
        let g = WorldGeometry {
            width: 1000.0,
            height: 100.0,
            tx_range: 150.0,
        };
        let topo = Topology::build(1, g, 2, Placement::Line { spacing: 800.0 });
        let mut s = Session::new(&topo, NodeId(0), 1);
        assert_eq!(s.scoped_flood(NodeId(0), u32::MAX, 0).len(), 1);
        assert_eq!(s.overhead().processing, 1);
    }

    #[test]
    fn scoped_flood_respects_radius() {
        let topo = line(12);
        let mut s = Session::new(&topo, NodeId(0), 1);
        let region = s.scoped_flood(NodeId(6), 3, 0);
        let nodes: Vec<u32> = region.iter().map(|r| r.0 .0).collect();
        assert_eq!(nodes.len(), 7);
        assert!(nodes.iter().all(|&n| (3..=9).contains(&n)));
        // nodes at distance < 3 rebroadcast: 6, 5, 7, 4, 8
        assert_eq!(s.overhead().tx, 5);
    }

    #[test]
    fn false_reporter_is_outvoted() {
        // node 0 in the middle with five honest silent neighbours
        use crate::topology::Point;
        use rand::SeedableRng;
        let g = WorldGeometry {
            width: 1000.0,
            height: 1000.0,
            tx_range: 150.0,
        };
        let mut positions = vec![Point::new(500.0, 500.0)];
        for k in 0..5 {
            let a = k as f64 * std::f64::consts::TAU / 5.0;
            positions.push(Point::new(500.0 + 100.0 * a.cos(), 500.0 + 100.0 * a.sin()));
        }
        let topo =
            Topology::from_positions(g, positions, rand_chacha::ChaCha8Rng::seed_from_u64(1));
        let mut obs = Observations {
            slots: 10,
            nodes: vec![
                NodeObservation {
                    frames: vec![3; 10],
                    ..NodeObservation::default()
                };
                6
            ],
        };
        let region: Vec<NodeId> = topo.nodes().collect();
        assert!(!majority_vote(
            &topo,
            &obs,
            &region,
            &[NodeId(0)],
            (0, 9),
            0.5
        ));
        assert!(majority_vote(
            &topo,
            &obs,
            &region,
            &[NodeId(0), NodeId(1), NodeId(2), NodeId(3)],
            (0, 9),
            0.5
        ));
        // silent neighbours that overheard nothing do not count against it
        for n in 1..6 {
            obs.nodes[n].frames = vec![0; 10];
        }
        assert!(majority_vote(
            &topo,
            &obs,
            &region,
            &[NodeId(0)],
            (0, 9),
            0.5
        ));
    }

    #[test]
    fn coarse_match_needs_overlap_and_similarity() {
        let reference = Reference::new(CoarseSignature {
            component: Component::FrameCount,
            episode: Episode {
                slots: (40..60).collect(),
                values: attack_series(5).iter().map(|v| v + 10.0).collect(),
                baseline: 10.0,
            },
        })
        .unwrap();
        let config = MatchConfig::default();
        // relay sees the same traffic at three times the frame multiple
        let relay = Episode {
            slots: (40..60).collect(),
            values: attack_series(5).iter().map(|v| 3.0 * v + 50.0).collect(),
            baseline: 50.0,
        };
        let m = coarse_match(&[relay], &reference, &config).unwrap();
        // identical up to rounding in the normalisation
        assert!(m.d_n <= 0.1, "{}", m.d_n);
        assert_eq!((m.t_s, m.t_l), (40, 59));
        let short = Episode {
            slots: vec![41, 42],
            values: vec![200.0, 210.0],
            baseline: 10.0,
        };
        assert!(coarse_match(&[short], &reference, &config).is_none());
        let outside = Episode {
            slots: (0..20).collect(),
            values: attack_series(5),
            baseline: 0.0,
        };
        assert!(coarse_match(&[outside], &reference, &config).is_none());
    }
}
