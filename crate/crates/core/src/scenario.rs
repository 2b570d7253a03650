//! Experiment harness: builds a world from a JSON config, injects
//! background and attack traffic, runs the MAC simulation, traces the
//! attack and scores the result against the simulator's ground truth.
//!
//! Results are one [`MetricsRecord`] per (repetition, method, component);
//! [`emit_results`] turns them into `metrics.csv`, `summary.csv` and
//! per-preset plot data.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::mac_sim::{FlowId, FlowSpec, MacConfig, MacError, World};
use crate::spatiotemporal::{fuse, AttackClass, FusionConfig};
use crate::stats::{chi_square_dependency, increase_rate, Component, ContingencyTable};
use crate::topology::{MobilityModel, NodeId, Placement, Point, Topology, WorldGeometry};
use crate::traceback::{
    coarse_match, trace_ddos_fine, trace_dos_coarse, victim_reference, MatchConfig, MessageKind,
    ObservationConfig, Observations, Overhead, PlanParams, Reference, Session, TraceError,
    TracebackConfig,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error("no records to emit")]
    EmptyRecords,
    #[error("ring radii must be strictly increasing")]
    InvalidRings,
}

type Result<T> = std::result::Result<T, ScenarioError>;

fn config_error(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Coarse-grained traceback.
    Ct,
    /// Fine-grained traceback.
    Ft,
    Flooding,
    Ers,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackerSpread {
    /// Attackers as far apart as possible within ±2 hops of the target
    /// distance.
    Far,
    /// Attackers packed within `radius` hops of one node at the target
    /// distance.
    Clustered { radius: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Random victim; attackers at `attacker_hops` from it (or as far as the
    /// topology allows).
    Hops {
        attacker_hops: u32,
        attackers: usize,
        spread: AttackerSpread,
    },
    /// Fixed node ids.
    Fixed { victim: u32, attackers: Vec<u32> },
    /// Victim and attackers are the nodes nearest to the given points,
    /// expressed as fractions of the field. Attacker `i` moves from
    /// `starts[i]` to `targets[i]`, arriving after `arrive_fraction` of
    /// the attack period.
    Scripted {
        victim: (f64, f64),
        starts: Vec<(f64, f64)>,
        targets: Vec<(f64, f64)>,
        arrive_fraction: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timing {
    pub warmup_slots: u32,
    pub attack_slots: u32,
    pub tail_slots: u32,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            warmup_slots: 35,
            attack_slots: 25,
            tail_slots: 5,
        }
    }
}

impl Timing {
    pub fn total(&self) -> u32 {
        self.warmup_slots + self.attack_slots + self.tail_slots
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilityParams {
    /// Fraction of non-attacker nodes moving by random waypoint.
    pub intermediate_fraction: f64,
    pub v_max: f64,
    /// Seconds.
    pub pause: f64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self {
            intermediate_fraction: 0.0,
            v_max: 2.0,
            pause: 2.5,
        }
    }
}

/// Whole experiment description; every field has a default so a config
/// file only needs what differs. `"preset": NAME` in a file starts from
/// that preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub preset: String,
    pub geometry: WorldGeometry,
    pub node_count: usize,
    pub placement: Placement,
    /// Fraction of nodes sourcing one background flow each.
    pub background_fraction: f64,
    /// Background rate per flow as a fraction of the attack rate.
    pub background_volume: f64,
    /// Total attack rate; split evenly across attackers.
    pub attack_rate_pps: f64,
    /// No attack traffic at all when false.
    pub attack: bool,
    /// Attackers write another node's MAC address into their frames.
    pub spoof_macs: bool,
    pub layout: Layout,
    pub timing: Timing,
    pub mobility: MobilityParams,
    pub plan: PlanParams,
    pub matching: MatchConfig,
    pub observation: ObservationConfig,
    pub fusion: FusionConfig,
    /// Run spatio-temporal fusion on each coarse trace.
    pub run_fusion: bool,
    pub methods: Vec<Method>,
    /// Coarse-traceback components; each yields its own record.
    pub components: Vec<Component>,
    pub k_max: usize,
    /// ERS ring radii; empty means R, 2R, … up to the victim's eccentricity.
    pub ers_rings: Vec<u32>,
    pub mac: MacConfig,
    pub seed: u64,
    pub repetitions: u32,
    /// Every run must trace successfully (the CLI exits with 3 otherwise).
    pub must_succeed: bool,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            preset: "custom".into(),
            geometry: WorldGeometry::default(),
            node_count: 100,
            placement: Placement::UniformRandom,
            background_fraction: 0.1,
            background_volume: 0.075,
            attack_rate_pps: 20.0,
            attack: true,
            spoof_macs: false,
            layout: Layout::Hops {
                attacker_hops: 8,
                attackers: 1,
                spread: AttackerSpread::Far,
            },
            timing: Timing::default(),
            mobility: MobilityParams::default(),
            plan: PlanParams::default(),
            matching: MatchConfig::default(),
            observation: ObservationConfig::default(),
            fusion: FusionConfig::default(),
            run_fusion: false,
            methods: vec![Method::Ct],
            components: vec![Component::FrameCount],
            k_max: 12,
            ers_rings: Vec::new(),
            mac: MacConfig::default(),
            seed: 1,
            repetitions: 10,
            must_succeed: false,
            threads: 0,
        }
    }
}

/// Side of a square field giving about 9.35 neighbours per node at 150 m
/// range, the density of 1,000 nodes in 2750 m × 2750 m.
fn square_side(nodes: usize) -> f64 {
    2750.0 * (nodes as f64 / 1000.0).sqrt()
}

fn square(nodes: usize) -> WorldGeometry {
    let side = square_side(nodes).round();
    WorldGeometry {
        width: side,
        height: side,
        tx_range: 150.0,
    }
}

pub const PRESETS: &[&str] = &[
    "line-dos",
    "grid-dos",
    "fig3",
    "fig10",
    "ddos",
    "overhead",
    "mobile-dos",
    "clustered-ddos",
    "spread-ddos",
    "crossing-ddos",
    "paper-scale",
];

impl ScenarioConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            preset: name.to_string(),
            ..Self::default()
        };
        let mobile_matching = MatchConfig {
            min_overlap: 0.15,
            ..MatchConfig::default()
        };
        let config = match name {
            "line-dos" => Self {
                geometry: WorldGeometry {
                    width: 2000.0,
                    height: 200.0,
                    tx_range: 150.0,
                },
                node_count: 20,
                placement: Placement::Line { spacing: 100.0 },
                background_fraction: 0.0,
                layout: Layout::Fixed {
                    victim: 0,
                    attackers: vec![19],
                },
                must_succeed: true,
                ..base
            },
            "grid-dos" => Self {
                geometry: WorldGeometry {
                    width: 700.0,
                    height: 700.0,
                    tx_range: 150.0,
                },
                node_count: 25,
                placement: Placement::Grid { spacing: 140.0 },
                background_fraction: 0.0,
                layout: Layout::Fixed {
                    victim: 0,
                    attackers: vec![24],
                },
                must_succeed: true,
                ..base
            },
            "fig3" => Self {
                geometry: WorldGeometry {
                    width: 670.0,
                    height: 670.0,
                    tx_range: 150.0,
                },
                node_count: 50,
                background_volume: 0.1,
                layout: Layout::Hops {
                    attacker_hops: 4,
                    attackers: 1,
                    spread: AttackerSpread::Far,
                },
                methods: Vec::new(),
                ..base
            },
            "fig10" => Self {
                geometry: square(200),
                node_count: 200,
                background_fraction: 0.05,
                components: Component::ALL.to_vec(),
                methods: vec![Method::Ct, Method::Ft],
                ..base
            },
            "ddos" => Self {
                geometry: square(200),
                node_count: 200,
                background_fraction: 0.1,
                layout: Layout::Hops {
                    attacker_hops: 7,
                    attackers: 3,
                    spread: AttackerSpread::Far,
                },
                methods: vec![Method::Ft],
                ..base
            },
            "overhead" => Self {
                geometry: square(300),
                node_count: 300,
                background_fraction: 0.05,
                layout: Layout::Hops {
                    attacker_hops: 10,
                    attackers: 1,
                    spread: AttackerSpread::Far,
                },
                methods: vec![Method::Ct, Method::Flooding, Method::Ers],
                repetitions: 5,
                ..base
            },
            "mobile-dos" => Self {
                geometry: square(300),
                node_count: 300,
                background_fraction: 0.05,
                layout: Layout::Scripted {
                    victim: (0.5, 0.08),
                    starts: vec![(0.15, 0.75)],
                    targets: vec![(0.85, 0.75)],
                    arrive_fraction: 1.0,
                },
                timing: Timing {
                    warmup_slots: 35,
                    attack_slots: 40,
                    tail_slots: 0,
                },
                mobility: MobilityParams {
                    intermediate_fraction: 0.05,
                    ..MobilityParams::default()
                },
                matching: mobile_matching,
                attack_rate_pps: 40.0,
                run_fusion: true,
                ..base
            },
            "clustered-ddos" => Self {
                geometry: square(300),
                node_count: 300,
                background_fraction: 0.05,
                layout: Layout::Hops {
                    attacker_hops: 9,
                    attackers: 6,
                    spread: AttackerSpread::Clustered { radius: 2 },
                },
                timing: Timing {
                    warmup_slots: 35,
                    attack_slots: 40,
                    tail_slots: 0,
                },
                matching: mobile_matching,
                attack_rate_pps: 40.0,
                run_fusion: true,
                ..base
            },
            "spread-ddos" => Self {
                layout: Layout::Hops {
                    attacker_hops: 7,
                    attackers: 6,
                    spread: AttackerSpread::Far,
                },
                ..Self::preset("clustered-ddos")?
            }
            .renamed(name),
            "crossing-ddos" => Self {
                layout: Layout::Scripted {
                    victim: (0.5, 0.08),
                    starts: vec![(0.1, 0.75), (0.9, 0.75)],
                    targets: vec![(0.48, 0.75), (0.52, 0.75)],
                    arrive_fraction: 0.6,
                },
                ..Self::preset("mobile-dos")?
            }
            .renamed(name),
            "paper-scale" => Self {
                geometry: square(1000),
                node_count: 1000,
                background_fraction: 0.1,
                layout: Layout::Hops {
                    attacker_hops: 17,
                    attackers: 1,
                    spread: AttackerSpread::Far,
                },
                methods: vec![Method::Ct, Method::Ft, Method::Flooding, Method::Ers],
                ..base
            },
            other => return Err(ScenarioError::UnknownPreset(other.to_string())),
        };
        Ok(config)
    }

    fn renamed(mut self, name: &str) -> Self {
        self.preset = name.to_string();
        self
    }

    /// Parses a JSON config. A `"preset"` key naming a known preset starts
    /// from that preset; other keys override it.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let base = match value.get("preset").and_then(Value::as_str) {
            Some(name) if PRESETS.contains(&name) => serde_json::to_value(Self::preset(name)?)?,
            _ => serde_json::to_value(Self::default())?,
        };
        let mut merged = base;
        merge(&mut merged, value);
        let config: Self = serde_json::from_value(merged)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    /// Applies `PREFIX_KEY=VALUE` overrides: `__` separates nested keys and
    /// the value is parsed as JSON, falling back to a plain string.
    pub fn with_env<I>(self, prefix: &str, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut value = serde_json::to_value(&self)?;
        let mut touched = false;
        for (key, raw) in vars {
            let Some(rest) = key.strip_prefix(prefix) else {
                continue;
            };
            let path: Vec<String> = rest.to_lowercase().split("__").map(String::from).collect();
            set_path(&mut value, &path, parse_scalar(&raw));
            touched = true;
        }
        if !touched {
            return Ok(self);
        }
        let config: Self = serde_json::from_value(value)?;
        config.validate()?;
        Ok(config)
    }

    /// Sets one dotted key (`matching.alpha`) to a JSON-parsed value.
    pub fn with_param(&self, key: &str, raw: &str) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        let path: Vec<String> = key.split('.').map(String::from).collect();
        if !has_path(&value, &path) {
            return Err(config_error(key, "no such key"));
        }
        set_path(&mut value, &path, parse_scalar(raw));
        let config: Self =
            serde_json::from_value(value).map_err(|e| config_error(key, e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fraction = |field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(config_error(field, format!("{v} is outside [0, 1]")))
            }
        };
        fraction("background_fraction", self.background_fraction)?;
        fraction("background_volume", self.background_volume)?;
        fraction(
            "mobility.intermediate_fraction",
            self.mobility.intermediate_fraction,
        )?;
        if self.repetitions < 1 {
            return Err(config_error("repetitions", "must be at least 1"));
        }
        if self.node_count < 2 {
            return Err(config_error("node_count", "need at least 2 nodes"));
        }
        if self.attack && !(self.attack_rate_pps > 0.0) {
            return Err(config_error("attack_rate_pps", "must be positive"));
        }
        if self.timing.attack_slots == 0 {
            return Err(config_error("timing.attack_slots", "must be positive"));
        }
        if u64::from(self.timing.warmup_slots) <= self.observation.frame_count.cold_start {
            return Err(config_error(
                "timing.warmup_slots",
                "must exceed the detector cold start",
            ));
        }
        if self.ers_rings.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_error(
                "ers_rings",
                "radii must be strictly increasing",
            ));
        }
        match &self.layout {
            Layout::Fixed { victim, attackers } => {
                let n = self.node_count as u32;
                if *victim >= n || attackers.iter().any(|&a| a >= n || a == *victim) {
                    return Err(config_error(
                        "layout",
                        "node ids out of range or attacker = victim",
                    ));
                }
            }
            Layout::Scripted {
                starts,
                targets,
                arrive_fraction,
                ..
            } => {
                if starts.len() != targets.len() || starts.is_empty() {
                    return Err(config_error("layout", "need one target per start"));
                }
                if !(*arrive_fraction > 0.0 && *arrive_fraction <= 1.0) {
                    return Err(config_error("layout.arrive_fraction", "must lie in (0, 1]"));
                }
            }
            Layout::Hops { attackers, .. } => {
                if *attackers == 0 || *attackers >= self.node_count {
                    return Err(config_error("layout.attackers", "must be in 1..node_count"));
                }
            }
        }
        Ok(())
    }

    fn traceback(&self, component: Component) -> TracebackConfig {
        TracebackConfig {
            plan: self.plan,
            matching: self.matching,
            component,
            k_max: self.k_max,
            sn: 1,
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // tagged enums are replaced whole
                    Some(slot) if slot.is_object() && v.is_object() && v.get("kind").is_none() => {
                        merge(slot, v)
                    }
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn has_path(value: &Value, path: &[String]) -> bool {
    match path.split_first() {
        None => true,
        Some((head, rest)) => value.get(head).is_some_and(|v| has_path(v, rest)),
    }
}

fn set_path(value: &mut Value, path: &[String], new: Value) {
    match path.split_first() {
        None => *value = new,
        Some((head, rest)) => {
            if !value.is_object() {
                *value = Value::Object(Default::default());
            }
            let slot = value
                .as_object_mut()
                .expect("just made an object")
                .entry(head.clone())
                .or_insert(Value::Null);
            set_path(slot, rest, new);
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub preset: String,
    /// `key=value` of the sweep point, empty outside sweeps.
    pub sweep: String,
    pub rep: u32,
    pub seed: u64,
    pub method: Method,
    pub component: Option<Component>,
    pub attackers: usize,
    pub attacker_hops: Option<u32>,
    /// Undefined without an attack.
    pub success: Option<bool>,
    pub false_positive: bool,
    pub messages_tx: u64,
    pub messages_rx: u64,
    pub processing: u64,
    pub path_len: usize,
    pub floods: Option<u32>,
    pub srf: Option<f64>,
    pub trf: Option<f64>,
    pub class: Option<AttackClass>,
    pub rl: Option<f64>,
    pub rl_error: Option<f64>,
    pub trajectories: Option<usize>,
    pub surge_at_crossing: Option<bool>,
    pub increase_frame: Option<f64>,
    pub increase_busy: Option<f64>,
    pub increase_collision: Option<f64>,
    pub chi2_frame: Option<f64>,
    pub chi2_busy: Option<f64>,
    pub chi2_collision: Option<f64>,
    pub error: String,
}

impl MetricsRecord {
    pub fn messages(&self) -> u64 {
        self.messages_tx + self.messages_rx
    }
}

// ---------------------------------------------------------------------------
// World construction

/// Ground truth the harness knows and the protocol does not.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub victim: NodeId,
    pub attackers: Vec<NodeId>,
    /// Nodes that transmitted attack DATA, attackers included.
    pub relays: BTreeSet<NodeId>,
    pub attack_flows: Vec<FlowId>,
    pub attack_window: (u32, u32),
}

/// A simulated run, before any traceback.
pub struct Prepared {
    pub world: World,
    pub truth: GroundTruth,
    pub observations: Observations,
}

fn run_seed(config: &ScenarioConfig, rep: u32) -> u64 {
    config
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(rep as u64)
}

fn nearest(topo: &Topology, p: Point, exclude: &BTreeSet<NodeId>) -> NodeId {
    topo.nodes()
        .filter(|n| !exclude.contains(n))
        .min_by(|&a, &b| {
            topo.position(a)
                .distance(&p)
                .total_cmp(&topo.position(b).distance(&p))
        })
        .expect("topology has nodes")
}

fn field_point(g: &WorldGeometry, (fx, fy): (f64, f64)) -> Point {
    Point::new(fx * g.width, fy * g.height)
}

/// Greedy max-min spread over `candidates` using hop distance.
fn spread_out(topo: &Topology, candidates: &[NodeId], k: usize) -> Vec<NodeId> {
    let mut chosen: Vec<NodeId> = candidates.first().copied().into_iter().collect();
    while chosen.len() < k {
        let next = candidates
            .iter()
            .filter(|c| !chosen.contains(c))
            .max_by_key(|&&c| {
                let d = chosen
                    .iter()
                    .map(|&s| topo.hops(s, c).unwrap_or(u32::MAX))
                    .min()
                    .unwrap_or(u32::MAX);
                (d, std::cmp::Reverse(c))
            });
        match next {
            Some(&c) => chosen.push(c),
            None => break,
        }
    }
    chosen
}

fn pick_hops_layout(
    topo: &Topology,
    rng: &mut ChaCha8Rng,
    hops: u32,
    count: usize,
    spread: AttackerSpread,
) -> (NodeId, Vec<NodeId>) {
    let mut victims: Vec<NodeId> = topo.nodes().collect();
    victims.shuffle(rng);
    // best (victim, distance) seen when nothing reaches the target
    let mut fallback: Option<(NodeId, u32)> = None;
    for &v in victims.iter().take(64) {
        let reach = topo.within_hops(v, u32::MAX);
        let ecc = reach.iter().map(|&(_, h)| h).max().unwrap_or(0);
        if ecc >= hops {
            return (
                v,
                attackers_around(topo, rng, v, &reach, hops, count, spread),
            );
        }
        if fallback.map_or(true, |(_, e)| ecc > e) {
            fallback = Some((v, ecc));
        }
    }
    let (v, ecc) = fallback.expect("at least one candidate victim");
    let reach = topo.within_hops(v, u32::MAX);
    (
        v,
        attackers_around(topo, rng, v, &reach, ecc, count, spread),
    )
}

fn attackers_around(
    topo: &Topology,
    rng: &mut ChaCha8Rng,
    victim: NodeId,
    reach: &[(NodeId, u32)],
    hops: u32,
    count: usize,
    spread: AttackerSpread,
) -> Vec<NodeId> {
    let mut at_target: Vec<NodeId> = reach
        .iter()
        .filter(|&&(_, h)| h == hops)
        .map(|&(n, _)| n)
        .collect();
    at_target.shuffle(rng);
    match spread {
        AttackerSpread::Far => {
            let mut band: Vec<NodeId> = reach
                .iter()
                .filter(|&&(n, h)| n != victim && h + 2 >= hops && h <= hops + 2 && h > 0)
                .map(|&(n, _)| n)
                .collect();
            band.shuffle(rng);
            // the first attacker sits exactly at the target distance
            if let Some(first) = at_target.first() {
                band.retain(|n| n != first);
                band.insert(0, *first);
            }
            spread_out(topo, &band, count)
        }
        AttackerSpread::Clustered { radius } => {
            let center = at_target[0];
            let mut near: Vec<(NodeId, u32)> = topo
                .within_hops(center, radius)
                .into_iter()
                .filter(|&(n, _)| {
                    n != victim && topo.hops(victim, n).is_some_and(|h| h + 1 >= hops)
                })
                .collect();
            near.sort_by_key(|&(n, h)| (h, n));
            near.into_iter().take(count).map(|(n, _)| n).collect()
        }
    }
}

/// Builds the world, injects traffic and runs the simulation for one
/// repetition.
pub fn prepare(config: &ScenarioConfig, rep: u32) -> Result<Prepared> {
    config.validate()?;
    let seed = run_seed(config, rep);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let mut topo = Topology::build(seed, config.geometry, config.node_count, config.placement);
    let t = config.timing;
    let attack_from = t.warmup_slots;
    let attack_to = t.warmup_slots + t.attack_slots;

    let (victim, attackers, scripts) = match &config.layout {
        Layout::Fixed { victim, attackers } => (
            NodeId(*victim),
            attackers.iter().map(|&a| NodeId(a)).collect(),
            Vec::new(),
        ),
        Layout::Hops {
            attacker_hops,
            attackers,
            spread,
        } => {
            let (v, a) = pick_hops_layout(&topo, &mut rng, *attacker_hops, *attackers, *spread);
            (v, a, Vec::new())
        }
        Layout::Scripted {
            victim,
            starts,
            targets,
            arrive_fraction,
        } => {
            let g = config.geometry;
            let mut used = BTreeSet::new();
            let v = nearest(&topo, field_point(&g, *victim), &used);
            used.insert(v);
            let mut attackers = Vec::new();
            let mut scripts = Vec::new();
            let travel_time = arrive_fraction * t.attack_slots as f64 * config.mac.slot_seconds;
            // attackers must start connected to the victim
            let cut_off: BTreeSet<NodeId> = topo
                .nodes()
                .filter(|&n| topo.hops(v, n).is_none())
                .collect();
            for (s, e) in starts.iter().zip(targets) {
                let skip: BTreeSet<NodeId> = used.union(&cut_off).copied().collect();
                let a = nearest(&topo, field_point(&g, *s), &skip);
                used.insert(a);
                let target = field_point(&g, *e);
                let speed = topo.position(a).distance(&target) / travel_time;
                attackers.push(a);
                scripts.push((a, target, speed));
            }
            (v, attackers, scripts)
        }
    };

    let excluded: BTreeSet<NodeId> = attackers.iter().copied().chain([victim]).collect();
    if config.mobility.intermediate_fraction > 0.0 {
        let mut others: Vec<NodeId> = topo.nodes().filter(|n| !excluded.contains(n)).collect();
        others.shuffle(&mut rng);
        let k = (config.mobility.intermediate_fraction * others.len() as f64).round() as usize;
        for &n in &others[..k] {
            topo.set_mobility(
                n,
                MobilityModel::RandomWaypoint {
                    v_max: config.mobility.v_max,
                    pause: config.mobility.pause,
                },
            );
        }
    }

    let mut world = World::new(topo, config.mac, seed ^ 0xA11CE);
    let total = t.total();
    let n_bg = (config.background_fraction * config.node_count as f64).round() as usize;
    let bg_rate = config.background_volume * config.attack_rate_pps;
    if n_bg > 0 && bg_rate > 0.0 {
        let mut sources: Vec<NodeId> = world
            .topology()
            .nodes()
            .filter(|n| !excluded.contains(n))
            .collect();
        sources.shuffle(&mut rng);
        for &src in sources.iter().take(n_bg) {
            let reachable: Vec<NodeId> = world
                .topology()
                .within_hops(src, u32::MAX)
                .into_iter()
                .map(|(n, _)| n)
                .filter(|&n| n != src)
                .collect();
            if let Some(&dst) = reachable.choose(&mut rng) {
                world.inject_flow(FlowSpec::new(src, dst, bg_rate, 0, total))?;
            }
        }
    }

    let mut attack_flows = Vec::new();
    if config.attack {
        let rate = config.attack_rate_pps / attackers.len() as f64;
        let n = config.node_count as u32;
        for &a in &attackers {
            let mut spec = FlowSpec::new(a, victim, rate, attack_from, attack_to);
            if config.spoof_macs {
                spec.spoof_mac = Some(NodeId((a.0 + n / 2) % n));
            }
            attack_flows.push(world.inject_flow(spec)?);
        }
    }

    if scripts.is_empty() {
        world.run_slots(total);
    } else {
        world.run_until_slot(attack_from);
        for &(a, target, speed) in &scripts {
            world.topology_mut().set_mobility(
                a,
                MobilityModel::Scripted {
                    waypoints: vec![target],
                    speed,
                },
            );
        }
        world.run_until_slot(total);
    }

    let relays = attack_flows
        .iter()
        .flat_map(|&f| world.flow_relays(f).iter().copied())
        .collect();
    let observations = Observations::collect(&world, &config.observation)
        .map_err(|e| config_error("observation", e.to_string()))?;
    Ok(Prepared {
        world,
        truth: GroundTruth {
            victim,
            attackers,
            relays,
            attack_flows,
            attack_window: (attack_from, attack_to - 1),
        },
        observations,
    })
}

// ---------------------------------------------------------------------------
// Baselines

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineTrace {
    /// Matching observers ordered by hop distance from the victim.
    pub matched: Vec<(NodeId, u32)>,
    /// Farthest matching observer.
    pub origin: Option<NodeId>,
    pub overhead: Overhead,
    pub floods: u32,
}

fn flood_and_match(
    session: &mut Session<'_>,
    obs: &Observations,
    victim: NodeId,
    reference: &Reference,
    config: &TracebackConfig,
    radius: u32,
) -> Vec<(NodeId, u32)> {
    let reached = session.scoped_flood(victim, radius, 0);
    let mut matched = Vec::new();
    for (n, h) in reached {
        if coarse_match(
            obs.episodes(n, config.component),
            reference,
            &config.matching,
        )
        .is_some()
        {
            if n != victim {
                session.unicast(n, victim, MessageKind::Response, 0);
            }
            matched.push((n, h));
        }
    }
    matched.sort_by_key(|&(n, h)| (h, n));
    matched
}

fn add(a: Overhead, b: Overhead) -> Overhead {
    Overhead {
        tx: a.tx + b.tx,
        rx: a.rx + b.rx,
        processing: a.processing + b.processing,
    }
}

/// Network-wide flood of the signature query with `(SN, V)` duplicate
/// suppression; every matching node answers the victim directly.
pub fn baseline_flooding(
    topo: &Topology,
    obs: &Observations,
    victim: NodeId,
    reference: &Reference,
    config: &TracebackConfig,
) -> BaselineTrace {
    let mut session = Session::new(topo, victim, config.sn);
    let matched = flood_and_match(&mut session, obs, victim, reference, config, u32::MAX);
    BaselineTrace {
        origin: matched.last().map(|&(n, _)| n),
        matched,
        overhead: session.overhead(),
        floods: 1,
    }
}

/// Default ERS schedule: R, 2R, … until the ring covers the victim's
/// eccentricity.
pub fn default_rings(topo: &Topology, victim: NodeId, step: u32) -> Vec<u32> {
    let ecc = topo
        .within_hops(victim, u32::MAX)
        .iter()
        .map(|&(_, h)| h)
        .max()
        .unwrap_or(0);
    let step = step.max(1);
    (1..)
        .map(|i| i * step)
        .take_while(|&r| r < ecc + step)
        .collect()
}

/// Expanding ring search: fresh bounded floods with growing TTL. Stops once
/// the farthest matching observer lies strictly inside the ring, or when
/// the schedule or the network is exhausted.
pub fn baseline_ers(
    topo: &Topology,
    obs: &Observations,
    victim: NodeId,
    reference: &Reference,
    config: &TracebackConfig,
    rings: &[u32],
) -> Result<BaselineTrace> {
    if rings.is_empty() || rings.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ScenarioError::InvalidRings);
    }
    let ecc = topo
        .within_hops(victim, u32::MAX)
        .iter()
        .map(|&(_, h)| h)
        .max()
        .unwrap_or(0);
    let mut overhead = Overhead::default();
    let mut matched = Vec::new();
    let mut floods = 0;
    for (i, &ttl) in rings.iter().enumerate() {
        let mut session = Session::new(topo, victim, config.sn + i as u32);
        matched = flood_and_match(&mut session, obs, victim, reference, config, ttl);
        overhead = add(overhead, session.overhead());
        floods += 1;
        let farthest = matched.last().map_or(0, |&(_, h)| h);
        if farthest < ttl || ttl >= ecc {
            break;
        }
    }
    Ok(BaselineTrace {
        origin: matched.last().map(|&(n, _)| n),
        matched,
        overhead,
        floods,
    })
}

// ---------------------------------------------------------------------------
// Running and scoring

fn within(topo: &Topology, a: NodeId, b: NodeId, radius: u32) -> bool {
    topo.hops(a, b).is_some_and(|h| h <= radius)
}

fn region_has_relay(
    topo: &Topology,
    contact: NodeId,
    relays: &BTreeSet<NodeId>,
    radius: u32,
) -> bool {
    relays.iter().any(|&r| within(topo, contact, r, radius))
}

/// Increase rate and χ² dependency per component, measured at the attack
/// relays and their neighbours against the warm-up period and against
/// nodes far from the attack path.
fn abnormality_measures(p: &Prepared) -> [(Option<f64>, Option<f64>); 3] {
    let world = &p.world;
    let topo = world.topology();
    let truth = &p.truth;
    if truth.relays.is_empty() {
        return [(None, None); 3];
    }
    let near: BTreeSet<NodeId> = truth
        .relays
        .iter()
        .flat_map(|&r| topo.neighbors(r).iter().copied().chain([r]))
        .collect();
    let far: Vec<NodeId> = topo
        .nodes()
        .filter(|&n| truth.relays.iter().all(|&r| !within(topo, n, r, 2)))
        .collect();
    let (from, to) = truth.attack_window;
    let warmup = 0..from;
    Component::ALL.map(|c| {
        let mean_over = |range: std::ops::Range<u32>| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for &n in &near {
                for r in world.activity(n).iter().filter(|r| range.contains(&r.slot)) {
                    sum += r.value(c);
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        };
        let rate = increase_rate(mean_over(from..to + 1), mean_over(warmup.clone())).ok();
        let span = (to - from + 1) as u64;
        let abnormal = |nodes: &mut dyn Iterator<Item = NodeId>| {
            let mut hit = 0u64;
            let mut total = 0u64;
            for n in nodes {
                hit += p
                    .observations
                    .episodes(n, c)
                    .iter()
                    .map(|e| e.samples_within(from, to) as u64)
                    .sum::<u64>();
                total += span;
            }
            (hit, total - hit)
        };
        let (a1, a2) = abnormal(&mut near.iter().copied());
        let (b1, b2) = abnormal(&mut far.iter().copied());
        let chi = chi_square_dependency(&ContingencyTable::new(a1, a2, b1, b2), 0.025)
            .ok()
            .map(|o| o.statistic);
        (rate, chi)
    })
}

fn blank_record(
    config: &ScenarioConfig,
    sweep: &str,
    rep: u32,
    p: &Prepared,
    method: Method,
) -> MetricsRecord {
    let topo = p.world.topology();
    let m = abnormality_measures(p);
    MetricsRecord {
        preset: config.preset.clone(),
        sweep: sweep.to_string(),
        rep,
        seed: run_seed(config, rep),
        method,
        component: None,
        attackers: p.truth.attackers.len(),
        attacker_hops: p
            .truth
            .attackers
            .iter()
            .filter_map(|&a| topo.hops(p.truth.victim, a))
            .max(),
        success: None,
        false_positive: false,
        messages_tx: 0,
        messages_rx: 0,
        processing: 0,
        path_len: 0,
        floods: None,
        srf: None,
        trf: None,
        class: None,
        rl: None,
        rl_error: None,
        trajectories: None,
        surge_at_crossing: None,
        increase_frame: m[0].0,
        increase_busy: m[1].0,
        increase_collision: m[2].0,
        chi2_frame: m[0].1,
        chi2_busy: m[1].1,
        chi2_collision: m[2].1,
        error: String::new(),
    }
}

fn set_overhead(record: &mut MetricsRecord, o: Overhead) {
    record.messages_tx = o.tx;
    record.messages_rx = o.rx;
    record.processing = o.processing;
}

fn run_coarse(
    config: &ScenarioConfig,
    p: &Prepared,
    component: Component,
    mut record: MetricsRecord,
) -> MetricsRecord {
    let topo = p.world.topology();
    let truth = &p.truth;
    let r = config.plan.vicinity_radius;
    record.component = Some(component);
    let attacked = config.attack && !truth.attackers.is_empty();
    match trace_dos_coarse(
        topo,
        &p.observations,
        truth.victim,
        &config.traceback(component),
    ) {
        Ok(trace) => {
            set_overhead(&mut record, trace.overhead);
            record.path_len = trace.path.len();
            let off_path = trace
                .path
                .iter()
                .any(|&c| !region_has_relay(topo, c, &truth.relays, r));
            record.false_positive = if attacked { off_path } else { true };
            if attacked {
                let origin_ok = truth
                    .attackers
                    .iter()
                    .any(|&a| within(topo, trace.origin, a, r));
                record.success = Some(origin_ok && !off_path);
            }
            if config.run_fusion {
                fusion_metrics(config, p, &trace, &mut record);
            }
        }
        Err(e) => {
            record.error = e.to_string();
            if attacked {
                record.success = Some(false);
            }
        }
    }
    record
}

fn fusion_metrics(
    config: &ScenarioConfig,
    p: &Prepared,
    trace: &crate::traceback::CoarseTrace,
    record: &mut MetricsRecord,
) {
    let topo = p.world.topology();
    let r = config.plan.vicinity_radius;
    match fuse(topo, &p.observations, trace, &config.fusion, r) {
        Ok(f) => {
            record.srf = f.classification.map(|c| c.srf);
            record.trf = f.classification.map(|c| c.trf);
            record.class = f.classification.map(|c| c.class);
            record.rl = Some(f.rl.rl);
            record.rl_error = p
                .truth
                .attackers
                .iter()
                .filter_map(|&a| topo.hops(f.rl.contact, a))
                .map(|h| (f.rl.rl - h as f64).abs())
                .min_by(f64::total_cmp);
            record.trajectories = Some(f.trajectories.len());
            record.surge_at_crossing = Some(
                f.surge_regions
                    .iter()
                    .any(|&c| p.truth.attackers.iter().any(|&a| within(topo, c, a, r))),
            );
        }
        Err(e) => record.error = e.to_string(),
    }
}

fn run_fine(config: &ScenarioConfig, p: &Prepared, mut record: MetricsRecord) -> MetricsRecord {
    let topo = p.world.topology();
    let truth = &p.truth;
    let r = config.plan.vicinity_radius;
    let attacked = config.attack && !truth.attackers.is_empty();
    match trace_ddos_fine(
        topo,
        &p.observations,
        truth.victim,
        &config.traceback(Component::FrameCount),
    ) {
        Ok(trace) => {
            set_overhead(&mut record, trace.overhead);
            record.path_len = trace.path.len();
            let leaves = &trace.tree.leaves;
            let stray_edge = trace
                .tree
                .edges
                .iter()
                .any(|e| !truth.relays.contains(&e.src));
            let stray_leaf = leaves
                .iter()
                .any(|&l| !truth.attackers.iter().any(|&a| within(topo, l, a, r)));
            record.false_positive = if attacked {
                stray_edge || stray_leaf
            } else {
                true
            };
            if attacked {
                let covered = truth
                    .attackers
                    .iter()
                    .all(|&a| leaves.iter().any(|&l| within(topo, l, a, r)));
                record.success = Some(covered);
            }
        }
        Err(e) => {
            record.error = e.to_string();
            if attacked {
                record.success = Some(false);
            }
        }
    }
    record
}

fn run_baseline(
    config: &ScenarioConfig,
    p: &Prepared,
    method: Method,
    mut record: MetricsRecord,
) -> MetricsRecord {
    let topo = p.world.topology();
    let truth = &p.truth;
    let r = config.plan.vicinity_radius;
    let tb = config.traceback(Component::FrameCount);
    record.component = Some(Component::FrameCount);
    let Some(reference) = victim_reference(&p.observations, truth.victim, tb.component) else {
        record.error = TraceError::NoSignature(truth.victim).to_string();
        record.success = config.attack.then_some(false);
        return record;
    };
    let trace = match method {
        Method::Flooding => baseline_flooding(topo, &p.observations, truth.victim, &reference, &tb),
        _ => {
            let rings = if config.ers_rings.is_empty() {
                default_rings(topo, truth.victim, r)
            } else {
                config.ers_rings.clone()
            };
            match baseline_ers(topo, &p.observations, truth.victim, &reference, &tb, &rings) {
                Ok(t) => t,
                Err(e) => {
                    record.error = e.to_string();
                    return record;
                }
            }
        }
    };
    set_overhead(&mut record, trace.overhead);
    record.floods = Some(trace.floods);
    record.path_len = trace.matched.len();
    if config.attack {
        record.success = Some(
            trace
                .origin
                .is_some_and(|o| truth.attackers.iter().any(|&a| within(topo, o, a, r))),
        );
        record.false_positive = trace
            .matched
            .iter()
            .any(|&(n, _)| !region_has_relay(topo, n, &truth.relays, 1));
    } else {
        record.false_positive = !trace.matched.is_empty();
    }
    record
}

/// All records of one repetition.
pub fn run_repetition(
    config: &ScenarioConfig,
    sweep: &str,
    rep: u32,
) -> Result<Vec<MetricsRecord>> {
    let p = prepare(config, rep)?;
    let mut out = Vec::new();
    let blank = blank_record(config, sweep, rep, &p, Method::Ct);
    if config.methods.is_empty() {
        out.push(blank);
        return Ok(out);
    }
    for &method in &config.methods {
        let record = MetricsRecord {
            method,
            ..blank.clone()
        };
        match method {
            Method::Ct => {
                for &c in &config.components {
                    out.push(run_coarse(config, &p, c, record.clone()));
                }
            }
            Method::Ft => out.push(run_fine(config, &p, record)),
            Method::Flooding | Method::Ers => out.push(run_baseline(config, &p, method, record)),
        }
    }
    Ok(out)
}

fn sweep_label(sweep: Option<(&str, &str)>) -> String {
    sweep.map(|(k, v)| format!("{k}={v}")).unwrap_or_default()
}

fn run_labelled(config: &ScenarioConfig, sweep: &str) -> Result<Vec<MetricsRecord>> {
    config.validate()?;
    let threads = match config.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(config.repetitions as usize)
    .max(1);
    let reps: Vec<u32> = (0..config.repetitions).collect();
    let chunks: Vec<Vec<u32>> = (0..threads)
        .map(|t| reps.iter().copied().skip(t).step_by(threads).collect())
        .collect();
    let results: Vec<Result<Vec<(u32, Vec<MetricsRecord>)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| {
                s.spawn(move || {
                    chunk
                        .iter()
                        .map(|&rep| run_repetition(config, sweep, rep).map(|r| (rep, r)))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("repetition worker panicked"))
            .collect()
    });
    let mut by_rep = BTreeMap::new();
    for r in results {
        for (rep, records) in r? {
            by_rep.insert(rep, records);
        }
    }
    Ok(by_rep.into_values().flatten().collect())
}

/// Runs every repetition (in parallel, merged in repetition order).
pub fn run_scenario(config: &ScenarioConfig) -> Result<Vec<MetricsRecord>> {
    run_labelled(config, "")
}

/// Runs the scenario once per value of the dotted config key.
pub fn run_sweep(
    config: &ScenarioConfig,
    key: &str,
    values: &[String],
) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for v in values {
        let point = config.with_param(key, v)?;
        out.extend(run_labelled(&point, &sweep_label(Some((key, v))))?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Aggregation and output

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub preset: String,
    pub sweep: String,
    pub method: Method,
    pub component: Option<Component>,
    pub runs: usize,
    pub success_rate: Option<f64>,
    pub success_std: Option<f64>,
    pub false_positive_rate: f64,
    pub messages_mean: f64,
    pub messages_std: f64,
    pub srf_mean: Option<f64>,
    pub trf_mean: Option<f64>,
    pub rl_error_mean: Option<f64>,
    pub increase_frame: Option<f64>,
    pub increase_busy: Option<f64>,
    pub increase_collision: Option<f64>,
    pub chi2_frame: Option<f64>,
    pub chi2_busy: Option<f64>,
    pub chi2_collision: Option<f64>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

fn mean_of(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().filter(|x| x.is_finite()).collect();
    mean_std(&v).map(|(m, _)| m)
}

/// One row per (preset, sweep point, method, component), in first-seen
/// order.
pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<(String, String, Method, Option<Component>), Vec<&MetricsRecord>> =
        BTreeMap::new();
    for r in records {
        let key = (r.preset.clone(), r.sweep.clone(), r.method, r.component);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let success: Vec<f64> = g
                .iter()
                .filter_map(|r| r.success)
                .map(|s| if s { 1.0 } else { 0.0 })
                .collect();
            let s = mean_std(&success);
            let messages: Vec<f64> = g.iter().map(|r| r.messages() as f64).collect();
            let (mm, ms) = mean_std(&messages).unwrap_or((0.0, 0.0));
            SummaryRow {
                preset: key.0,
                sweep: key.1,
                method: key.2,
                component: key.3,
                runs: g.len(),
                success_rate: s.map(|s| s.0),
                success_std: s.map(|s| s.1),
                false_positive_rate: g.iter().filter(|r| r.false_positive).count() as f64
                    / g.len() as f64,
                messages_mean: mm,
                messages_std: ms,
                srf_mean: mean_of(g.iter().map(|r| r.srf)),
                trf_mean: mean_of(g.iter().map(|r| r.trf)),
                rl_error_mean: mean_of(g.iter().map(|r| r.rl_error)),
                increase_frame: mean_of(g.iter().map(|r| r.increase_frame)),
                increase_busy: mean_of(g.iter().map(|r| r.increase_busy)),
                increase_collision: mean_of(g.iter().map(|r| r.increase_collision)),
                chi2_frame: mean_of(g.iter().map(|r| r.chi2_frame)),
                chi2_busy: mean_of(g.iter().map(|r| r.chi2_busy)),
                chi2_collision: mean_of(g.iter().map(|r| r.chi2_collision)),
            }
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `metrics.csv`, `summary.csv` and `plotdata/<preset>.tsv`.
pub fn emit_results(records: &[MetricsRecord], dir: &Path) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(ScenarioError::EmptyRecords);
    }
    fs::create_dir_all(dir.join("plotdata"))?;
    write_rows(&dir.join("metrics.csv"), records, b',')?;
    let summary = summarize(records);
    write_rows(&dir.join("summary.csv"), &summary, b',')?;
    let presets: BTreeSet<&str> = summary.iter().map(|s| s.preset.as_str()).collect();
    for preset in presets {
        let rows: Vec<&SummaryRow> = summary.iter().filter(|s| s.preset == preset).collect();
        write_rows(
            &dir.join("plotdata").join(format!("{preset}.tsv")),
            &rows,
            b'\t',
        )?;
    }
    Ok(summary)
}

pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(dir.join("summary.csv"))?;
    r.deserialize()
        .map(|row| row.map_err(ScenarioError::from))
        .collect()
}

/// Plain-text table of a summary.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
    let mut out = format!(
        "{:<16} {:<28} {:<9} {:<16} {:>4} {:>8} {:>6} {:>10} {:>8} {:>9}\n",
        "preset", "sweep", "method", "component", "runs", "success", "fp", "messages", "srf", "trf"
    );
    for r in rows {
        let component = r.component.map_or("-".to_string(), |c| c.to_string());
        let method = serde_json::to_value(r.method)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        out.push_str(&format!(
            "{:<16} {:<28} {:<9} {:<16} {:>4} {:>8} {:>6.3} {:>10.1} {:>8} {:>9}\n",
            r.preset,
            if r.sweep.is_empty() { "-" } else { &r.sweep },
            method,
            component,
            r.runs,
            opt(r.success_rate),
            r.false_positive_rate,
            r.messages_mean,
            opt(r.srf_mean),
            opt(r.trf_mean),
        ));
    }
    out
}

/// Whether every run of a must-succeed preset traced successfully.
pub fn must_succeed_failures(config: &ScenarioConfig, records: &[MetricsRecord]) -> usize {
    if !config.must_succeed {
        return 0;
    }
    records.iter().filter(|r| r.success == Some(false)).count()
}
