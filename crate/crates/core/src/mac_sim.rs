//! Slotted abstraction of 802.11 DCF with RTS/CTS.
//!
//! Time advances in micro-slots; a monitoring slot (10 simulated seconds) is
//! `micro_slots_per_slot` of them. Every node with a queued frame senses the
//! medium, counts its backoff down over idle micro-slots and sends an RTS when
//! the counter is zero. An RTS fails when another sender starts in the same
//! micro-slot within range of the sender or the receiver, or when the receiver
//! is itself busy. A successful RTS/CTS/DATA/ACK exchange completes atomically
//! and keeps the medium busy around both ends for its whole airtime.
//!
//! While running, the world keeps per-node activity records (frames, busy
//! time, collisions) for each monitoring slot, and per-observer counts of the
//! DATA frames overheard on every `(src, dest)` link.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{NodeId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(pub u32);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameKind {
    Rts,
    Cts,
    Data,
    Ack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub kind: FrameKind,
    pub src_mac: NodeId,
    pub dest_mac: NodeId,
    pub flow: FlowId,
    pub size: u32,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacError {
    #[error("no route from {src} to {dst}")]
    Unreachable { src: NodeId, dst: NodeId },
    #[error("flow source and destination are both {0}")]
    SelfFlow(NodeId),
    #[error("invalid flow rate {0}")]
    InvalidRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacConfig {
    pub micro_slots_per_slot: u32,
    pub slot_seconds: f64,
    pub cw_min: u32,
    pub cw_max: u32,
    pub short_retry_limit: u32,
    pub long_retry_limit: u32,
    /// Micro-slots a frame may spend in transmission attempts; `None` never
    /// expires.
    pub lifetime_limit: Option<u64>,
    pub control_airtime: u32,
    pub data_airtime: u32,
    pub queue_capacity: usize,
    /// Mobility is advanced every this many micro-slots.
    pub mobility_interval: u32,
    pub record_events: bool,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self {
            micro_slots_per_slot: 10_000,
            slot_seconds: 10.0,
            cw_min: 16,
            cw_max: 1024,
            short_retry_limit: 7,
            long_retry_limit: 4,
            lifetime_limit: Some(512),
            control_airtime: 1,
            data_airtime: 2,
            queue_capacity: 64,
            mobility_interval: 1000,
            record_events: false,
        }
    }
}

impl MacConfig {
    pub fn exchange_airtime(&self) -> u64 {
        3 * self.control_airtime as u64 + self.data_airtime as u64
    }

    pub fn micro_slot_seconds(&self) -> f64 {
        self.slot_seconds / self.micro_slots_per_slot as f64
    }
}

/// Contention state of the frame at the head of a node's queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BackoffState {
    pub cw: u32,
    pub attempts: u32,
    pub retry_short: u32,
    pub retry_long: u32,
    pub lifetime_started: Option<u64>,
    counter: Option<u32>,
}

impl BackoffState {
    fn fresh(cw_min: u32) -> Self {
        Self {
            cw: cw_min,
            attempts: 0,
            retry_short: 0,
            retry_long: 0,
            lifetime_started: None,
            counter: None,
        }
    }

    pub fn counter(&self) -> Option<u32> {
        self.counter
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MacActivityRecord {
    pub node: NodeId,
    pub slot: u32,
    pub frame_count: u32,
    /// Fraction of the slot the medium was sensed busy.
    pub busy_time: f64,
    pub collision_count: u32,
}

impl MacActivityRecord {
    pub fn value(&self, component: crate::stats::Component) -> f64 {
        use crate::stats::Component;
        match component {
            Component::FrameCount => self.frame_count as f64,
            Component::BusyTime => self.busy_time,
            Component::CollisionCount => self.collision_count as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OverheardEntry {
    pub observer: NodeId,
    pub src_mac: NodeId,
    pub dest_mac: NodeId,
    pub slot: u32,
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Lifetime,
    RetryLimit,
    QueueOverflow,
    NoRoute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    Generate,
    Exchange,
    Collision,
    NoCts,
    Deliver,
    Drop(DropReason),
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Generate => f.write_str("generate"),
            EventKind::Exchange => f.write_str("exchange"),
            EventKind::Collision => f.write_str("collision"),
            EventKind::NoCts => f.write_str("no_cts"),
            EventKind::Deliver => f.write_str("deliver"),
            EventKind::Drop(DropReason::Lifetime) => f.write_str("drop_lifetime"),
            EventKind::Drop(DropReason::RetryLimit) => f.write_str("drop_retry"),
            EventKind::Drop(DropReason::QueueOverflow) => f.write_str("drop_queue"),
            EventKind::Drop(DropReason::NoRoute) => f.write_str("drop_noroute"),
        }
    }
}

/// One channel event; displayed as `slot micro_slot event_kind src dst flow`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChannelEvent {
    pub slot: u32,
    pub micro_slot: u32,
    pub kind: EventKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub flow: FlowId,
}

impl fmt::Display for ChannelEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {}",
            self.slot, self.micro_slot, self.kind, self.src, self.dst, self.flow
        )
    }
}

/// Packet arrival process of a flow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrivals {
    /// Evenly spaced, with a random phase.
    Constant,
    /// Exponential inter-arrival times.
    #[default]
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub src: NodeId,
    pub dst: NodeId,
    pub rate_pps: f64,
    pub start_slot: u32,
    pub stop_slot: u32,
    /// MAC address written into frames the source itself transmits.
    pub spoof_mac: Option<NodeId>,
    pub arrivals: Arrivals,
}

impl FlowSpec {
    pub fn new(src: NodeId, dst: NodeId, rate_pps: f64, start_slot: u32, stop_slot: u32) -> Self {
        Self {
            src,
            dst,
            rate_pps,
            start_slot,
            stop_slot,
            spoof_mac: None,
            arrivals: Arrivals::Poisson,
        }
    }

    pub fn constant(self) -> Self {
        Self {
            arrivals: Arrivals::Constant,
            ..self
        }
    }
}

#[derive(Debug, Clone)]
struct Flow {
    spec: FlowSpec,
    interval: f64,
    /// Next emission, in fractional micro-slots.
    next_at: f64,
    stop_micro: u64,
}

impl Flow {
    fn gap(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.spec.arrivals {
            Arrivals::Constant => self.interval,
            Arrivals::Poisson => -(1.0 - rng.gen::<f64>()).ln() * self.interval,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    flow: FlowId,
    dst: NodeId,
}

#[derive(Debug, Clone)]
struct NodeMac {
    queue: VecDeque<Packet>,
    backoff: BackoffState,
}

#[derive(Debug, Clone, Copy, Default)]
struct SlotAccumulator {
    frames: u32,
    busy: u64,
    collisions: u32,
}

/// Fate of every generated DATA packet.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Conservation {
    pub generated: u64,
    pub delivered: u64,
    pub dropped_lifetime: u64,
    pub dropped_retry: u64,
    pub dropped_queue: u64,
    pub dropped_no_route: u64,
    pub in_flight: u64,
}

impl Conservation {
    pub fn dropped(&self) -> u64 {
        self.dropped_lifetime + self.dropped_retry + self.dropped_queue + self.dropped_no_route
    }

    pub fn balanced(&self) -> bool {
        self.generated == self.delivered + self.dropped() + self.in_flight
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlowCounters {
    pub generated: u64,
    pub delivered: u64,
}

/// Single-owner simulation state.
#[derive(Debug, Clone)]
pub struct World {
    topology: Topology,
    config: MacConfig,
    rng: ChaCha8Rng,
    now: u64,
    nodes: Vec<NodeMac>,
    /// Nodes with a non-empty queue.
    active: BTreeSet<u32>,
    flows: Vec<Flow>,
    flow_counters: Vec<FlowCounters>,
    flow_relays: Vec<BTreeSet<NodeId>>,
    emissions: BinaryHeap<Reverse<(u64, u32)>>,
    busy_until: Vec<u64>,
    busy_carry: Vec<u64>,
    current: Vec<SlotAccumulator>,
    records: Vec<Vec<MacActivityRecord>>,
    links: Vec<BTreeMap<(NodeId, NodeId), Vec<u32>>>,
    ledger: Conservation,
    events: Vec<ChannelEvent>,
    scratch_mark: Vec<u64>,
    mark_epoch: u64,
}

impl World {
    pub fn new(topology: Topology, config: MacConfig, seed: u64) -> Self {
        let n = topology.len();
        Self {
            nodes: vec![
                NodeMac {
                    queue: VecDeque::new(),
                    backoff: BackoffState::fresh(config.cw_min),
                };
                n
            ],
            topology,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_635f_7369_6d00),
            now: 0,
            active: BTreeSet::new(),
            flows: Vec::new(),
            flow_counters: Vec::new(),
            flow_relays: Vec::new(),
            emissions: BinaryHeap::new(),
            busy_until: vec![0; n],
            busy_carry: vec![0; n],
            current: vec![SlotAccumulator::default(); n],
            records: vec![Vec::new(); n],
            links: vec![BTreeMap::new(); n],
            ledger: Conservation::default(),
            events: Vec::new(),
            scratch_mark: vec![0; n],
            mark_epoch: 0,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn topology_mut(&mut self) -> &mut Topology {
        &mut self.topology
    }

    pub fn config(&self) -> &MacConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Number of completed monitoring slots.
    pub fn completed_slots(&self) -> u32 {
        (self.now / self.config.micro_slots_per_slot as u64) as u32
    }

    pub fn backoff(&self, node: NodeId) -> &BackoffState {
        &self.nodes[node.index()].backoff
    }

    pub fn queue_len(&self, node: NodeId) -> usize {
        self.nodes[node.index()].queue.len()
    }

    /// Registers a constant-rate DATA source routed hop by hop toward `dst`.
    pub fn inject_flow(&mut self, spec: FlowSpec) -> Result<FlowId, MacError> {
        if spec.src == spec.dst {
            return Err(MacError::SelfFlow(spec.src));
        }
        if !(spec.rate_pps >= 0.0 && spec.rate_pps.is_finite()) {
            return Err(MacError::InvalidRate(spec.rate_pps));
        }
        if self.topology.hops(spec.src, spec.dst).is_none() {
            return Err(MacError::Unreachable {
                src: spec.src,
                dst: spec.dst,
            });
        }
        let id = FlowId(self.flows.len() as u32);
        let m = self.config.micro_slots_per_slot as u64;
        let interval = if spec.rate_pps > 0.0 {
            1.0 / (spec.rate_pps * self.config.micro_slot_seconds())
        } else {
            f64::INFINITY
        };
        let mut flow = Flow {
            spec,
            interval,
            next_at: f64::INFINITY,
            stop_micro: spec.stop_slot as u64 * m,
        };
        if interval.is_finite() {
            let offset = match spec.arrivals {
                Arrivals::Constant => self.rng.gen::<f64>() * interval,
                Arrivals::Poisson => flow.gap(&mut self.rng),
            };
            flow.next_at = (spec.start_slot as u64 * m) as f64 + offset;
            let first = flow.next_at.floor() as u64;
            if first < flow.stop_micro {
                self.emissions.push(Reverse((first, id.0)));
            }
        }
        self.flows.push(flow);
        self.flow_counters.push(FlowCounters::default());
        self.flow_relays.push(BTreeSet::new());
        Ok(id)
    }

    pub fn flow_spec(&self, flow: FlowId) -> &FlowSpec {
        &self.flows[flow.0 as usize].spec
    }

    pub fn flow_counters(&self, flow: FlowId) -> FlowCounters {
        self.flow_counters[flow.0 as usize]
    }

    /// Nodes that transmitted at least one DATA frame of `flow`, source
    /// included.
    pub fn flow_relays(&self, flow: FlowId) -> &BTreeSet<NodeId> {
        &self.flow_relays[flow.0 as usize]
    }

    pub fn conservation(&self) -> Conservation {
        Conservation {
            in_flight: self.nodes.iter().map(|n| n.queue.len() as u64).sum(),
            ..self.ledger
        }
    }

    /// Channel events recorded so far (only with `record_events`).
    pub fn event_log(&self) -> &[ChannelEvent] {
        &self.events
    }

    pub fn run_slots(&mut self, slots: u32) {
        let target = self.now + slots as u64 * self.config.micro_slots_per_slot as u64;
        while self.now < target {
            self.advance_micro_slot();
        }
    }

    pub fn run_until_slot(&mut self, slot: u32) {
        let done = self.completed_slots();
        if slot > done {
            self.run_slots(slot - done);
        }
    }

    /// Aggregated activity of `node` in a completed monitoring slot.
    pub fn collect_activity(&self, node: NodeId, slot: u32) -> Option<MacActivityRecord> {
        self.records[node.index()].get(slot as usize).copied()
    }

    pub fn activity(&self, node: NodeId) -> &[MacActivityRecord] {
        &self.records[node.index()]
    }

    /// Per-slot DATA counts of every link `node` overheard (its own
    /// transmissions and receptions included). Series are indexed by slot
    /// and may be shorter than the run.
    pub fn link_series(&self, node: NodeId) -> &BTreeMap<(NodeId, NodeId), Vec<u32>> {
        &self.links[node.index()]
    }

    pub fn overheard_entries(&self, node: NodeId) -> impl Iterator<Item = OverheardEntry> + '_ {
        self.links[node.index()]
            .iter()
            .flat_map(move |(&(src, dst), series)| {
                series
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(move |(slot, &count)| OverheardEntry {
                        observer: node,
                        src_mac: src,
                        dest_mac: dst,
                        slot: slot as u32,
                        count,
                    })
            })
    }

    fn slot_of(&self, t: u64) -> u32 {
        (t / self.config.micro_slots_per_slot as u64) as u32
    }

    fn emit(&mut self, kind: EventKind, src: NodeId, dst: NodeId, flow: FlowId) {
        if self.config.record_events {
            let m = self.config.micro_slots_per_slot as u64;
            self.events.push(ChannelEvent {
                slot: (self.now / m) as u32,
                micro_slot: (self.now % m) as u32,
                kind,
                src,
                dst,
                flow,
            });
        }
    }

    fn finish_slot(&mut self) {
        let slot = self.slot_of(self.now) - 1;
        let m = self.config.micro_slots_per_slot as f64;
        for i in 0..self.nodes.len() {
            let acc = std::mem::take(&mut self.current[i]);
            self.records[i].push(MacActivityRecord {
                node: NodeId(i as u32),
                slot,
                frame_count: acc.frames,
                busy_time: (acc.busy as f64 / m).min(1.0),
                collision_count: acc.collisions,
            });
            self.current[i].busy = std::mem::take(&mut self.busy_carry[i]);
        }
    }

    /// Adds `[start, end)` to the node's busy time, counting overlap with
    /// earlier busy periods once.
    fn mark_busy(&mut self, node: usize, start: u64, end: u64) {
        let from = start.max(self.busy_until[node]);
        if end > from {
            let slot_end =
                (self.slot_of(start) as u64 + 1) * self.config.micro_slots_per_slot as u64;
            let within = end.min(slot_end).saturating_sub(from);
            self.current[node].busy += within;
            self.busy_carry[node] += end - from - within;
            self.busy_until[node] = end;
        }
    }

    fn enqueue(&mut self, node: NodeId, packet: Packet) {
        let mac = &mut self.nodes[node.index()];
        if mac.queue.len() >= self.config.queue_capacity {
            self.ledger.dropped_queue += 1;
            self.emit(
                EventKind::Drop(DropReason::QueueOverflow),
                node,
                packet.dst,
                packet.flow,
            );
            return;
        }
        mac.queue.push_back(packet);
        self.active.insert(node.0);
    }

    fn pop_head(&mut self, node: NodeId) {
        let cw_min = self.config.cw_min;
        let mac = &mut self.nodes[node.index()];
        mac.queue.pop_front();
        mac.backoff = BackoffState::fresh(cw_min);
        if mac.queue.is_empty() {
            self.active.remove(&node.0);
        }
    }

    fn generate(&mut self) {
        while let Some(&Reverse((t, fid))) = self.emissions.peek() {
            if t > self.now {
                break;
            }
            self.emissions.pop();
            let flow = &mut self.flows[fid as usize];
            flow.next_at += flow.gap(&mut self.rng);
            let next = flow.next_at.floor() as u64;
            let (src, dst, stop) = (flow.spec.src, flow.spec.dst, flow.stop_micro);
            if next < stop {
                self.emissions.push(Reverse((next, fid)));
            }
            self.ledger.generated += 1;
            self.flow_counters[fid as usize].generated += 1;
            self.emit(EventKind::Generate, src, dst, FlowId(fid));
            self.enqueue(
                src,
                Packet {
                    flow: FlowId(fid),
                    dst,
                },
            );
        }
    }

    /// Drops the head frame of `node` if its lifetime ran out. The drop
    /// counts as a collision symptom of the sender.
    pub fn lifetime_expire(&mut self, node: NodeId) -> Option<ChannelEvent> {
        let limit = self.config.lifetime_limit?;
        let mac = &self.nodes[node.index()];
        let head = *mac.queue.front()?;
        let started = mac.backoff.lifetime_started?;
        if self.now < started + limit {
            return None;
        }
        self.ledger.dropped_lifetime += 1;
        self.current[node.index()].collisions += 1;
        self.pop_head(node);
        let m = self.config.micro_slots_per_slot as u64;
        let event = ChannelEvent {
            slot: (self.now / m) as u32,
            micro_slot: (self.now % m) as u32,
            kind: EventKind::Drop(DropReason::Lifetime),
            src: node,
            dst: head.dst,
            flow: head.flow,
        };
        if self.config.record_events {
            self.events.push(event);
        }
        Some(event)
    }

    /// Advances the world by one micro-slot and returns the channel events
    /// it produced.
    pub fn advance_micro_slot(&mut self) -> Vec<ChannelEvent> {
        let log_start = self.events.len();
        let m = self.config.micro_slots_per_slot as u64;
        if self.now > 0 && self.now % self.config.mobility_interval as u64 == 0 {
            let dt = self.config.mobility_interval as f64 * self.config.micro_slot_seconds();
            if self.topology.nodes().any(|n| self.topology.is_mobile(n)) {
                self.topology.mobility_step(dt);
            }
        }
        self.generate();

        let mut produced = Vec::new();
        let mut starters: Vec<(NodeId, NodeId)> = Vec::new();
        let active: Vec<u32> = self.active.iter().copied().collect();
        for id in active {
            let node = NodeId(id);
            if let Some(ev) = self.lifetime_expire(node) {
                if !self.config.record_events {
                    produced.push(ev);
                }
                continue;
            }
            if self.busy_until[node.index()] > self.now {
                continue;
            }
            let cw = self.nodes[node.index()].backoff.cw;
            let counter = match self.nodes[node.index()].backoff.counter {
                Some(c) => c,
                None => {
                    let c = self.rng.gen_range(0..cw);
                    self.nodes[node.index()].backoff.counter = Some(c);
                    c
                }
            };
            if counter > 0 {
                self.nodes[node.index()].backoff.counter = Some(counter - 1);
                continue;
            }
            let head = *self.nodes[node.index()]
                .queue
                .front()
                .expect("active nodes have a queued frame");
            match self.topology.routing().next_hop(node, head.dst) {
                Some(next) if next != node => starters.push((node, next)),
                _ => {
                    self.ledger.dropped_no_route += 1;
                    self.emit(
                        EventKind::Drop(DropReason::NoRoute),
                        node,
                        head.dst,
                        head.flow,
                    );
                    self.pop_head(node);
                }
            }
        }

        if !starters.is_empty() {
            self.resolve(&starters);
        }
        self.now += 1;
        if self.now % m == 0 {
            self.finish_slot();
        }
        if self.config.record_events {
            produced.extend_from_slice(&self.events[log_start..]);
        }
        produced
    }

    fn resolve(&mut self, starters: &[(NodeId, NodeId)]) {
        let t = self.now;
        let ctrl = self.config.control_airtime as u64;
        let exchange = self.config.exchange_airtime();
        let slot = self.slot_of(t);
        let mut outcomes = Vec::with_capacity(starters.len());
        for (i, &(s, d)) in starters.iter().enumerate() {
            let interfered = starters.iter().enumerate().any(|(j, &(o, _))| {
                j != i && (o == d || self.topology.in_range(o, d) || self.topology.in_range(o, s))
            });
            let outcome = if interfered {
                EventKind::Collision
            } else if self.busy_until[d.index()] > t || !self.topology.in_range(s, d) {
                EventKind::NoCts
            } else {
                EventKind::Exchange
            };
            outcomes.push(outcome);
        }

        for (&(s, d), outcome) in starters.iter().zip(outcomes) {
            let head = *self.nodes[s.index()]
                .queue
                .front()
                .expect("starter has a frame");
            if self.nodes[s.index()].backoff.lifetime_started.is_none() {
                self.nodes[s.index()].backoff.lifetime_started = Some(t);
            }
            match outcome {
                EventKind::Exchange => self.complete_exchange(s, d, head, t, exchange, slot),
                _ => {
                    self.emit(outcome, s, d, head.flow);
                    self.current[s.index()].frames += 1;
                    self.current[s.index()].collisions += 1;
                    self.mark_busy(s.index(), t, t + 2 * ctrl);
                    let neighbors = self.topology.neighbors(s).to_vec();
                    for o in neighbors {
                        let garbled = starters.iter().any(|&(other, _)| {
                            other != s && other != o && self.topology.in_range(other, o)
                        });
                        if garbled {
                            self.current[o.index()].collisions += 1;
                        } else {
                            self.current[o.index()].frames += 1;
                        }
                        self.mark_busy(o.index(), t, t + ctrl);
                    }
                    self.backoff_after_failure(s, head);
                }
            }
        }
    }

    fn backoff_after_failure(&mut self, s: NodeId, head: Packet) {
        let (cw_max, limit) = (self.config.cw_max, self.config.short_retry_limit);
        let b = &mut self.nodes[s.index()].backoff;
        b.retry_short += 1;
        b.attempts += 1;
        b.cw = (b.cw * 2).min(cw_max);
        b.counter = None;
        if b.retry_short > limit {
            self.ledger.dropped_retry += 1;
            self.emit(
                EventKind::Drop(DropReason::RetryLimit),
                s,
                head.dst,
                head.flow,
            );
            self.pop_head(s);
        }
    }

    fn complete_exchange(
        &mut self,
        s: NodeId,
        d: NodeId,
        head: Packet,
        t: u64,
        airtime: u64,
        slot: u32,
    ) {
        self.emit(EventKind::Exchange, s, d, head.flow);
        self.mark_epoch += 1;
        let epoch = self.mark_epoch;
        let flow = &self.flows[head.flow.0 as usize].spec;
        let src_mac = if s == flow.src {
            flow.spoof_mac.unwrap_or(s)
        } else {
            s
        };

        self.current[s.index()].frames += 4;
        self.current[d.index()].frames += 4;
        self.scratch_mark[s.index()] = epoch;
        self.scratch_mark[d.index()] = epoch;
        self.mark_busy(s.index(), t, t + airtime);
        self.mark_busy(d.index(), t, t + airtime);
        self.count_link(s, src_mac, d, slot);
        self.count_link(d, src_mac, d, slot);

        let s_neighbors = self.topology.neighbors(s).to_vec();
        let d_neighbors = self.topology.neighbors(d).to_vec();
        for &o in &s_neighbors {
            if o == d {
                continue;
            }
            // RTS + DATA
            self.current[o.index()].frames += 2;
            self.count_link(o, src_mac, d, slot);
        }
        for &o in &d_neighbors {
            if o == s {
                continue;
            }
            // CTS + ACK
            self.current[o.index()].frames += 2;
        }
        for o in s_neighbors.iter().chain(&d_neighbors) {
            if self.scratch_mark[o.index()] != epoch {
                self.scratch_mark[o.index()] = epoch;
                self.mark_busy(o.index(), t, t + airtime);
            }
        }

        self.flow_relays[head.flow.0 as usize].insert(s);
        self.pop_head(s);
        if d == head.dst {
            self.ledger.delivered += 1;
            self.flow_counters[head.flow.0 as usize].delivered += 1;
            self.emit(EventKind::Deliver, s, d, head.flow);
        } else {
            self.enqueue(d, head);
        }
    }

    fn count_link(&mut self, observer: NodeId, src: NodeId, dst: NodeId, slot: u32) {
        let series = self.links[observer.index()].entry((src, dst)).or_default();
        if series.len() <= slot as usize {
            series.resize(slot as usize + 1, 0);
        }
        series[slot as usize] += 1;
    }
}
