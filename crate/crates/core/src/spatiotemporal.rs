//! Spatio-temporal fusion of the reports gathered by a traceback session.
//!
//! Contacts report which of their vicinity nodes saw the attack signature
//! and when (`t_S`, `t_L`). Pairs of nearby contact regions are related in
//! two ways:
//! - SRF: how close, in hops, the matching observers of the two regions are.
//! - TRF: how tightly one region's observations follow the other's in time.
//!
//! Together the two factors separate a moving attacker from clustered or
//! spread DDoS. The observer ages also give a hop-relative estimate of where
//! the attacker is now.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{ks_statistic, ks_test};
use crate::topology::{NodeId, Topology};
use crate::traceback::{CoarseTrace, Observations, RegionReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("both vicinities are empty")]
    EmptyVicinity,
    #[error("no observer reported the attack signature")]
    NoPosition,
}

/// `(ζ, t_S, t_L, S)` of one observer; `s` is its hop distance to the
/// reporting contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatioTemporalSignature {
    pub observer: NodeId,
    pub d_n: f64,
    pub t_s: u32,
    pub t_l: u32,
    pub s: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactVicinityReport {
    pub contact: NodeId,
    pub level: u32,
    /// Nodes within the vicinity radius of the contact, reached by the query
    /// or not.
    pub vicinity_size: usize,
    pub observers: Vec<SpatioTemporalSignature>,
}

impl ContactVicinityReport {
    pub fn from_region(topo: &Topology, region: &RegionReport, vicinity_radius: u32) -> Self {
        Self {
            contact: region.contact,
            level: region.level,
            vicinity_size: topo.within_hops(region.contact, vicinity_radius).len(),
            observers: region
                .report
                .observers
                .iter()
                .map(|o| SpatioTemporalSignature {
                    observer: o.node,
                    d_n: o.d_n,
                    t_s: o.t_s,
                    t_l: o.t_l,
                    s: o.hops,
                })
                .collect(),
        }
    }

    pub fn age(&self) -> Option<(u32, u32)> {
        let t_s = self.observers.iter().map(|o| o.t_s).min()?;
        let t_l = self.observers.iter().map(|o| o.t_l).max()?;
        Some((t_s, t_l))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRelation {
    pub contact_x: NodeId,
    pub contact_y: NodeId,
    pub srf: f64,
    /// TRF in the orientation that gave the larger value.
    pub trf: f64,
    pub alpha: f64,
    /// Observer pairs at positive hop distance.
    pub p: usize,
    /// Observer pairs with `t_L(i) < t_S(j)` in the chosen orientation.
    pub p_temporal: usize,
    /// Observer pairs whose abnormal periods intersect.
    pub overlapping: usize,
    /// True when the chosen orientation runs from x to y.
    pub x_first: bool,
}

impl PairRelation {
    /// Regions in temporal order.
    pub fn ordered(&self) -> (NodeId, NodeId) {
        if self.x_first {
            (self.contact_x, self.contact_y)
        } else {
            (self.contact_y, self.contact_x)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttackClass {
    MobileDoS,
    ClusteredDDoS,
    ClusteredIntermittent,
    /// Low SRF with high TRF. The case is described but not named; the
    /// label is ours and results carry an ambiguity flag.
    SpreadTemporallyContinuous,
    SpreadDDoS,
    SpreadIntermittent,
}

impl AttackClass {
    pub fn ambiguous(self) -> bool {
        self == AttackClass::SpreadTemporallyContinuous
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub srf_thresh: f64,
    /// Per slot.
    pub trf_thresh: f64,
    /// ε as a fraction of `trf_thresh`.
    pub epsilon_ratio: f64,
    /// Pairs with α below this are left out of the class decision.
    pub alpha_floor: f64,
    /// Largest contact-to-contact hop distance for which a pair is related;
    /// `None` relates every pair of contacts.
    pub pair_radius: Option<u32>,
    /// KS significance for surge detection.
    pub ks_alpha: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            srf_thresh: 0.06,
            trf_thresh: 0.05,
            epsilon_ratio: 0.01,
            alpha_floor: 0.1,
            pair_radius: None,
            ks_alpha: 0.05,
        }
    }
}

impl FusionConfig {
    pub fn epsilon(&self) -> f64 {
        self.epsilon_ratio * self.trf_thresh
    }
}

/// α = n_s / (N_x + N_y).
pub fn compute_alpha(n_s: usize, n_x: usize, n_y: usize) -> Result<f64, FusionError> {
    if n_x + n_y == 0 {
        return Err(FusionError::EmptyVicinity);
    }
    Ok(n_s as f64 / (n_x + n_y) as f64)
}

/// SRF = α·P / ΣD_S over the positive hop distances between matching
/// observers; 0 when there are none.
pub fn srf_from(alpha: f64, hop_distances: &[u32]) -> f64 {
    let positive: Vec<u32> = hop_distances.iter().copied().filter(|&d| d > 0).collect();
    if positive.is_empty() {
        return 0.0;
    }
    alpha * positive.len() as f64 / positive.iter().map(|&d| d as f64).sum::<f64>()
}

/// TRF = α·P / ΣD_T over the gaps `t_S(j) − t_L(i)` of ordered pairs; 0
/// when there are none.
pub fn trf_from(alpha: f64, gaps: &[u32]) -> f64 {
    srf_from(alpha, gaps)
}

fn temporal(from: &ContactVicinityReport, to: &ContactVicinityReport) -> Vec<u32> {
    let mut gaps = Vec::new();
    for i in &from.observers {
        for j in &to.observers {
            if i.observer != j.observer && i.t_l < j.t_s {
                gaps.push(j.t_s - i.t_l);
            }
        }
    }
    gaps
}

/// SRF and TRF between two contact regions.
pub fn relate(
    topo: &Topology,
    x: &ContactVicinityReport,
    y: &ContactVicinityReport,
) -> Result<PairRelation, FusionError> {
    let matched: BTreeSet<NodeId> = x
        .observers
        .iter()
        .chain(&y.observers)
        .map(|o| o.observer)
        .collect();
    let alpha = compute_alpha(matched.len(), x.vicinity_size, y.vicinity_size)?;
    let mut hops = Vec::new();
    let mut overlapping = 0;
    for i in &x.observers {
        for j in &y.observers {
            if i.observer == j.observer {
                continue;
            }
            if let Some(h) = topo.hops(i.observer, j.observer) {
                hops.push(h);
            }
            if i.t_s <= j.t_l && j.t_s <= i.t_l {
                overlapping += 1;
            }
        }
    }
    let forward = temporal(x, y);
    let backward = temporal(y, x);
    let (trf_f, trf_b) = (trf_from(alpha, &forward), trf_from(alpha, &backward));
    let x_first = trf_f >= trf_b;
    Ok(PairRelation {
        contact_x: x.contact,
        contact_y: y.contact,
        srf: srf_from(alpha, &hops),
        trf: trf_f.max(trf_b),
        alpha,
        p: hops.iter().filter(|&&h| h > 0).count(),
        p_temporal: if x_first {
            forward.len()
        } else {
            backward.len()
        },
        overlapping,
        x_first,
    })
}

/// Aggregates used for the class decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: AttackClass,
    pub srf: f64,
    pub trf: f64,
    pub pairs_used: usize,
    pub ambiguous: bool,
}

/// Maps SRF and TRF to one of six classes. Only pairs with α at or above
/// the floor count.
///
/// Movement is judged pair by pair: any pair with both factors above
/// threshold means the attacker moved between those two regions, and the
/// reported factors are the means over such pairs. Otherwise SRF is
/// averaged over pairs with spatial relation and TRF over pairs with
/// temporal order, and the means pick the class.
///
/// TRF below ε reads as "extremely low" (intermittent attacks, long gaps)
/// only when ordered observer pairs outnumber overlapping ones. When the
/// attack periods overlap, a low TRF is treated as simultaneity.
pub fn classify_attack(relations: &[PairRelation], config: &FusionConfig) -> Classification {
    let used: Vec<&PairRelation> = relations
        .iter()
        .filter(|r| r.alpha >= config.alpha_floor)
        .collect();
    let mean = |xs: Vec<f64>| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let srf = mean(used.iter().filter(|r| r.p > 0).map(|r| r.srf).collect());
    let trf = mean(
        used.iter()
            .filter(|r| r.p_temporal > 0)
            .map(|r| r.trf)
            .collect(),
    );
    let moving: Vec<&PairRelation> = used
        .iter()
        .copied()
        .filter(|r| {
            r.p > 0 && r.p_temporal > 0 && r.srf >= config.srf_thresh && r.trf >= config.trf_thresh
        })
        .collect();
    if !moving.is_empty() {
        return Classification {
            class: AttackClass::MobileDoS,
            srf: mean(moving.iter().map(|r| r.srf).collect()),
            trf: mean(moving.iter().map(|r| r.trf).collect()),
            pairs_used: used.len(),
            ambiguous: false,
        };
    }
    let ordered: usize = used.iter().map(|r| r.p_temporal).sum();
    let overlapping: usize = used.iter().map(|r| r.overlapping).sum();

    let srf_high = srf >= config.srf_thresh;
    let class = if trf >= config.trf_thresh {
        if srf_high {
            AttackClass::MobileDoS
        } else {
            AttackClass::SpreadTemporallyContinuous
        }
    } else if trf < config.epsilon() && ordered > overlapping {
        if srf_high {
            AttackClass::ClusteredIntermittent
        } else {
            AttackClass::SpreadIntermittent
        }
    } else if srf_high {
        AttackClass::ClusteredDDoS
    } else {
        AttackClass::SpreadDDoS
    };
    Classification {
        class,
        srf,
        trf,
        pairs_used: used.len(),
        ambiguous: class.ambiguous(),
    }
}

/// True iff the observed series matches the slot-wise sum of both branch
/// signatures and matches neither alone. The branches are truncated to
/// their common length before summing.
pub fn detect_surge(xi_1: &[f64], xi_2: &[f64], observed: &[f64], alpha: f64) -> bool {
    let n = xi_1.len().min(xi_2.len());
    if n == 0 || observed.is_empty() {
        return false;
    }
    let sum: Vec<f64> = xi_1[..n]
        .iter()
        .zip(&xi_2[..n])
        .map(|(a, b)| a + b)
        .collect();
    let accepts = |reference: &[f64]| {
        ks_statistic(reference, observed)
            .map(|d| ks_test(d, reference.len(), observed.len(), alpha).accepted())
            .unwrap_or(false)
    };
    accepts(&sum) && !accepts(xi_1) && !accepts(xi_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeLocation {
    /// Contact holding the most recent observations.
    pub contact: NodeId,
    /// Mean hop distance from that contact of its most recent observers.
    pub rl: f64,
    pub observers: usize,
}

/// RL over the observers that saw the signature at the latest time. The
/// contact is the deepest one holding such observers (then the one with
/// most of them, then lowest id). RL is their mean hop distance to it,
/// skipping the contact itself.
pub fn estimate_relative_location(
    reports: &[ContactVicinityReport],
) -> Result<RelativeLocation, FusionError> {
    let latest = reports
        .iter()
        .flat_map(|r| r.observers.iter().map(|o| o.t_l))
        .max()
        .ok_or(FusionError::NoPosition)?;
    let mut best: Option<(&ContactVicinityReport, Vec<u32>)> = None;
    for r in reports {
        let hops: Vec<u32> = r
            .observers
            .iter()
            .filter(|o| o.t_l == latest && o.s > 0)
            .map(|o| o.s)
            .collect();
        if hops.is_empty() {
            continue;
        }
        let replace = match &best {
            None => true,
            Some((b, bh)) => {
                (r.level, hops.len(), std::cmp::Reverse(r.contact))
                    > (b.level, bh.len(), std::cmp::Reverse(b.contact))
            }
        };
        if replace {
            best = Some((r, hops));
        }
    }
    let (report, hops) = best.ok_or(FusionError::NoPosition)?;
    Ok(RelativeLocation {
        contact: report.contact,
        rl: hops.iter().map(|&h| h as f64).sum::<f64>() / hops.len() as f64,
        observers: hops.len(),
    })
}

/// Fusion result, serialised as JSON by the scenario runner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionResult {
    /// `None` when no contact pair clears the α floor: a lone region says
    /// nothing about spread or succession.
    pub classification: Option<Classification>,
    pub pairs: Vec<PairRelation>,
    /// Chains of regions the attack moved through, in time order.
    pub trajectories: Vec<Vec<NodeId>>,
    pub surge_regions: Vec<NodeId>,
    /// Most upstream region with a surge.
    pub crossing: Option<NodeId>,
    pub rl: RelativeLocation,
}

/// Excess DATA counts of every link abnormal inside `window` as seen by the
/// region's nodes, each over its own abnormal span. Per-link counts are
/// comparable between regions, unlike regional frame counts.
pub fn link_series(obs: &Observations, region: &RegionReport, window: (u32, u32)) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (n, _) in &region.region {
        for sig in obs.links(*n) {
            let spans: Vec<u32> = sig
                .episodes
                .iter()
                .flat_map(|e| e.slots.iter().copied())
                .filter(|&s| s >= window.0 && s <= window.1)
                .collect();
            if let (Some(&from), Some(&to)) = (spans.first(), spans.last()) {
                out.push(sig.excess_window(from, to));
            }
        }
    }
    out
}

/// The link series carrying the most excess traffic in the region.
pub fn region_series(obs: &Observations, region: &RegionReport, window: (u32, u32)) -> Vec<f64> {
    link_series(obs, region, window)
        .into_iter()
        .map(|s| (s.iter().sum::<f64>(), s))
        .fold(
            None,
            |best: Option<(f64, Vec<f64>)>, (total, s)| match best {
                Some((t, _)) if t >= total => best,
                _ => Some((total, s)),
            },
        )
        .map(|(_, s)| s)
        .unwrap_or_default()
}

fn maximal_chains(edges: &BTreeSet<(NodeId, NodeId)>, limit: usize) -> Vec<Vec<NodeId>> {
    let mut out: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    let mut indegree: BTreeMap<NodeId, usize> = BTreeMap::new();
    for &(a, b) in edges {
        out.entry(a).or_default().push(b);
        indegree.entry(a).or_default();
        *indegree.entry(b).or_default() += 1;
    }
    let mut chains = Vec::new();
    let mut stack: Vec<Vec<NodeId>> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&n, _)| vec![n])
        .collect();
    stack.reverse();
    while let Some(chain) = stack.pop() {
        if chains.len() >= limit {
            break;
        }
        let last = *chain.last().expect("chains are non-empty");
        let next: Vec<NodeId> = out
            .get(&last)
            .map(|v| v.iter().copied().filter(|n| !chain.contains(n)).collect())
            .unwrap_or_default();
        if next.is_empty() {
            chains.push(chain);
        } else {
            for n in next.into_iter().rev() {
                let mut longer = chain.clone();
                longer.push(n);
                stack.push(longer);
            }
        }
    }
    chains
}

/// Runs the victim-side fusion over a finished coarse session:
/// 1. Relate every pair of reporting regions that lie close enough together.
/// 2. Infer movement where SRF and TRF both pass their thresholds.
/// 3. Chain the movements into trajectories.
/// 4. Check for signature surges where trajectories cross.
/// 5. Classify the attack and estimate where the attacker is now.
pub fn fuse(
    topo: &Topology,
    obs: &Observations,
    trace: &CoarseTrace,
    config: &FusionConfig,
    vicinity_radius: u32,
) -> Result<FusionResult, FusionError> {
    let regions: Vec<&RegionReport> = trace
        .regions
        .iter()
        .filter(|r| !r.report.observers.is_empty())
        .collect();
    let reports: Vec<ContactVicinityReport> = regions
        .iter()
        .map(|r| ContactVicinityReport::from_region(topo, r, vicinity_radius))
        .collect();
    // Far-apart contacts share little and pull the spatial factor down, which is
    // what separates a spread attack from a clustered one. The victim's own
    // vicinity sits where every flow converges and says nothing about spread.
    let contacts: Vec<&ContactVicinityReport> = reports.iter().filter(|r| r.level > 0).collect();
    let mut pairs = Vec::new();
    for (i, x) in contacts.iter().enumerate() {
        for y in &contacts[i + 1..] {
            let near = match config.pair_radius {
                Some(radius) => topo.hops(x.contact, y.contact).is_some_and(|h| h <= radius),
                None => true,
            };
            if near {
                pairs.push(relate(topo, x, y)?);
            }
        }
    }
    let classification = Some(classify_attack(&pairs, config)).filter(|c| c.pairs_used > 0);

    let edges: BTreeSet<(NodeId, NodeId)> = pairs
        .iter()
        .filter(|p| {
            p.alpha >= config.alpha_floor
                && p.srf >= config.srf_thresh
                && p.trf >= config.trf_thresh
        })
        .map(|p| p.ordered())
        .collect();
    let rl = estimate_relative_location(&reports)?;
    let mut trajectories = maximal_chains(&edges, 64);
    if trajectories.is_empty() {
        trajectories.push(vec![rl.contact]);
    }

    let mut surge_regions = Vec::new();
    if trajectories.len() >= 2 {
        let region_of = |c: NodeId| regions.iter().find(|r| r.contact == c).copied();
        let window_of =
            |r: &RegionReport| ContactVicinityReport::from_region(topo, r, vicinity_radius).age();
        let sources: Vec<NodeId> = trajectories
            .iter()
            .map(|t| t[0])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let signatures: Vec<Vec<f64>> = sources
            .iter()
            .filter_map(|&c| {
                let r = region_of(c)?;
                Some(region_series(obs, r, window_of(r)?))
            })
            .filter(|s| !s.is_empty())
            .collect();
        if signatures.len() >= 2 {
            for r in &regions {
                if sources.contains(&r.contact) {
                    continue;
                }
                let Some(window) = window_of(r) else {
                    continue;
                };
                // any link in the region may be the one carrying both flows
                let surged = link_series(obs, r, window).iter().any(|observed| {
                    signatures.iter().enumerate().any(|(i, a)| {
                        signatures[i + 1..]
                            .iter()
                            .any(|b| detect_surge(a, b, observed, config.ks_alpha))
                    })
                });
                if surged {
                    surge_regions.push(r.contact);
                }
            }
        }
    }
    let crossing = surge_regions
        .iter()
        .copied()
        .max_by_key(|&c| (topo.hops(trace.victim, c), std::cmp::Reverse(c)));

    Ok(FusionResult {
        classification,
        pairs,
        trajectories,
        surge_regions,
        crossing,
        rl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn observer(id: u32, t_s: u32, t_l: u32, s: u32) -> SpatioTemporalSignature {
        SpatioTemporalSignature {
            observer: NodeId(id),
            d_n: 0.1,
            t_s,
            t_l,
            s,
        }
    }

    fn report(
        contact: u32,
        level: u32,
        size: usize,
        observers: Vec<SpatioTemporalSignature>,
    ) -> ContactVicinityReport {
        ContactVicinityReport {
            contact: NodeId(contact),
            level,
            vicinity_size: size,
            observers,
        }
    }

    fn relation(srf: f64, trf: f64) -> PairRelation {
        PairRelation {
            contact_x: NodeId(0),
            contact_y: NodeId(1),
            srf,
            trf,
            alpha: 0.5,
            p: 4,
            p_temporal: if trf > 0.0 { 4 } else { 0 },
            overlapping: 0,
            x_first: true,
        }
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(compute_alpha(20, 10, 10).unwrap(), 1.0);
        assert_eq!(compute_alpha(0, 10, 10).unwrap(), 0.0);
        assert!((compute_alpha(4, 10, 10).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(compute_alpha(0, 0, 0), Err(FusionError::EmptyVicinity));
    }

    #[test]
    fn srf_and_trf_examples() {
        assert_eq!(srf_from(0.7, &[]), 0.0);
        assert_eq!(srf_from(0.5, &[1]), 0.5);
        assert_eq!(trf_from(1.0, &[1]), 1.0);
        assert!(trf_from(1.0, &[500, 800]) < 0.01);
    }

    #[test]
    fn relation_orients_by_time() {
        let topo = crate::topology::Topology::build(
            1,
            crate::topology::WorldGeometry {
                width: 1000.0,
                height: 100.0,
                tx_range: 150.0,
            },
            8,
            crate::topology::Placement::Line { spacing: 100.0 },
        );
        // y's observers see the attack right after x's stop seeing it
        let x = report(
            1,
            1,
            4,
            vec![observer(1, 10, 19, 0), observer(2, 10, 19, 1)],
        );
        let y = report(
            5,
            2,
            4,
            vec![observer(5, 20, 29, 0), observer(6, 20, 29, 1)],
        );
        let r = relate(&topo, &x, &y).unwrap();
        assert!(r.x_first);
        assert_eq!(r.p_temporal, 4);
        assert_eq!(r.overlapping, 0);
        assert!((r.alpha - 0.5).abs() < 1e-12);
        // gaps all 1 slot
        assert!((r.trf - 0.5).abs() < 1e-12);
        // hop distances 4, 5, 3, 4
        assert!((r.srf - 0.5 * 4.0 / 16.0).abs() < 1e-12);
        let back = relate(&topo, &y, &x).unwrap();
        assert!(!back.x_first);
        assert_eq!(back.ordered(), (NodeId(1), NodeId(5)));
    }

    #[test]
    fn six_classes() {
        let c = FusionConfig::default();
        assert_eq!(
            classify_attack(&[relation(0.2, 0.5)], &c).class,
            AttackClass::MobileDoS
        );
        assert_eq!(
            classify_attack(&[relation(0.2, 0.01)], &c).class,
            AttackClass::ClusteredDDoS
        );
        assert_eq!(
            classify_attack(&[relation(0.2, 0.0001)], &c).class,
            AttackClass::ClusteredIntermittent
        );
        let odd = classify_attack(&[relation(0.01, 0.5)], &c);
        assert_eq!(odd.class, AttackClass::SpreadTemporallyContinuous);
        assert!(odd.ambiguous);
        assert_eq!(
            classify_attack(&[relation(0.01, 0.01)], &c).class,
            AttackClass::SpreadDDoS
        );
        assert_eq!(
            classify_attack(&[relation(0.01, 0.0001)], &c).class,
            AttackClass::SpreadIntermittent
        );
    }

    #[test]
    fn overlapping_attack_with_no_order_is_ddos_not_intermittent() {
        let c = FusionConfig::default();
        let mut r = relation(0.2, 0.0);
        r.overlapping = 30;
        assert_eq!(classify_attack(&[r], &c).class, AttackClass::ClusteredDDoS);
    }

    #[test]
    fn low_alpha_pairs_are_ignored() {
        let c = FusionConfig::default();
        let mut weak = relation(0.2, 0.5);
        weak.alpha = 0.05;
        let strong = relation(0.01, 0.01);
        assert_eq!(
            classify_attack(&[weak, strong], &c).class,
            AttackClass::SpreadDDoS
        );
    }

    #[test]
    fn surge_examples() {
        let a: Vec<f64> = (0..30).map(|i| 40.0 + (i * 7 % 11) as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| 35.0 + (i * 5 % 13) as f64).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        assert!(detect_surge(&a, &b, &sum, 0.05));
        assert!(!detect_surge(&a, &b, &a, 0.05));
    }

    #[test]
    fn rl_examples() {
        let single = [report(
            3,
            2,
            10,
            vec![observer(7, 0, 9, 2), observer(8, 0, 5, 1)],
        )];
        let rl = estimate_relative_location(&single).unwrap();
        assert_eq!((rl.contact, rl.rl), (NodeId(3), 2.0));
        let two = [report(
            3,
            2,
            10,
            vec![observer(7, 0, 9, 1), observer(8, 2, 9, 3)],
        )];
        assert_eq!(estimate_relative_location(&two).unwrap().rl, 2.0);
        assert_eq!(
            estimate_relative_location(&[]),
            Err(FusionError::NoPosition)
        );
    }

    #[test]
    fn chains_follow_edges() {
        let e = |a: u32, b: u32| (NodeId(a), NodeId(b));
        let edges: BTreeSet<_> = [e(1, 2), e(2, 3), e(4, 3)].into_iter().collect();
        let chains = maximal_chains(&edges, 10);
        assert_eq!(
            chains,
            vec![
                vec![NodeId(1), NodeId(2), NodeId(3)],
                vec![NodeId(4), NodeId(3)]
            ]
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn side(x: f64, t: f64) -> bool {
            x >= t
        }

        proptest! {
            #[test]
            fn factors_are_linear_in_alpha(
                alpha in 0.0f64..1.0,
                k in 0.0f64..4.0,
                d in prop::collection::vec(0u32..50, 0..20),
            ) {
                let base = srf_from(alpha, &d);
                prop_assert!(base >= 0.0);
                prop_assert!((srf_from(alpha * k, &d) - k * base).abs() <= 1e-9 * (1.0 + base));
                prop_assert!((trf_from(alpha * k, &d) - k * trf_from(alpha, &d)).abs() <= 1e-9 * (1.0 + base));
            }

            #[test]
            fn shorter_gaps_raise_trf(
                alpha in 0.01f64..1.0,
                gaps in prop::collection::vec(2u32..60, 1..20),
                cut in 1u32..60,
            ) {
                let shorter: Vec<u32> = gaps.iter().map(|&g| (g - cut.min(g - 1)).max(1)).collect();
                prop_assert!(trf_from(alpha, &shorter) > trf_from(alpha, &gaps));
            }

            #[test]
            fn class_depends_only_on_threshold_sides(
                srf in 0.0f64..0.3,
                trf in 0.0f64..0.2,
                srf2 in 0.0f64..0.3,
                trf2 in 0.0f64..0.2,
            ) {
                let c = FusionConfig::default();
                let same = side(srf, c.srf_thresh) == side(srf2, c.srf_thresh)
                    && side(trf, c.trf_thresh) == side(trf2, c.trf_thresh)
                    && side(trf, c.epsilon()) == side(trf2, c.epsilon())
                    && (trf > 0.0) == (trf2 > 0.0);
                prop_assume!(same);
                prop_assert_eq!(
                    classify_attack(&[relation(srf, trf)], &c).class,
                    classify_attack(&[relation(srf2, trf2)], &c).class
                );
            }

            #[test]
            fn simultaneous_attack_is_never_mobile(
                srfs in prop::collection::vec(0.0f64..1.0, 1..8),
                overlapping in 1usize..40,
            ) {
                let relations: Vec<PairRelation> = srfs
                    .iter()
                    .map(|&s| PairRelation { overlapping, ..relation(s, 0.0) })
                    .collect();
                let class = classify_attack(&relations, &FusionConfig::default()).class;
                prop_assert_ne!(class, AttackClass::MobileDoS);
            }
        }
    }
}
