//! Whole-pipeline properties checked on small seeded scenarios.

use std::collections::BTreeSet;

use attention::scenario::{prepare, run_scenario, Layout, Method, ScenarioConfig};
use attention::spatiotemporal::AttackClass;
use attention::stats::Component;
use attention::topology::{NodeId, Placement, WorldGeometry};
use attention::traceback::{trace_dos_coarse, MessageKind, TracebackConfig};

fn traceback_config(config: &ScenarioConfig) -> TracebackConfig {
    TracebackConfig {
        plan: config.plan,
        matching: config.matching,
        component: Component::FrameCount,
        k_max: config.k_max,
        sn: 1,
    }
}

fn line(nodes: usize, attacker: u32) -> ScenarioConfig {
    ScenarioConfig {
        geometry: WorldGeometry {
            width: 100.0 * nodes as f64,
            height: 200.0,
            tx_range: 150.0,
        },
        node_count: nodes,
        placement: Placement::Line { spacing: 100.0 },
        layout: Layout::Fixed {
            victim: 0,
            attackers: vec![attacker],
        },
        repetitions: 1,
        ..ScenarioConfig::preset("line-dos").unwrap()
    }
}

fn random_dos(reps: u32) -> ScenarioConfig {
    ScenarioConfig {
        repetitions: reps,
        methods: vec![Method::Ct, Method::Flooding],
        ..ScenarioConfig::preset("fig10").unwrap()
    }
    .with_param("components", r#"["frame_count"]"#)
    .unwrap()
}

#[test]
fn spoofed_macs_do_not_change_coarse_trace() {
    let honest = ScenarioConfig::preset("grid-dos").unwrap();
    let spoofed = ScenarioConfig {
        spoof_macs: true,
        ..honest.clone()
    };
    let a = prepare(&honest, 0).unwrap();
    let b = prepare(&spoofed, 0).unwrap();
    let attacker = b.truth.attackers[0];
    // the spoofed address really shows up on the attacker's first link
    let topo = b.world.topology();
    let seen: BTreeSet<NodeId> = topo
        .neighbors(attacker)
        .iter()
        .flat_map(|&n| b.observations.links(n).iter().map(|s| s.src_addr))
        .collect();
    let n = spoofed.node_count as u32;
    assert!(seen.contains(&NodeId((attacker.0 + n / 2) % n)), "{seen:?}");
    assert!(!seen.contains(&attacker), "{seen:?}");

    let tc = traceback_config(&honest);
    let ta = trace_dos_coarse(a.world.topology(), &a.observations, a.truth.victim, &tc).unwrap();
    let tb = trace_dos_coarse(b.world.topology(), &b.observations, b.truth.victim, &tc).unwrap();
    assert_eq!(ta.path, tb.path);
    assert_eq!(ta.origin, tb.origin);
    assert_eq!(ta.overhead, tb.overhead);
    let on_path = |t: &attention::traceback::CoarseTrace| {
        t.regions
            .iter()
            .map(|r| (r.contact, r.on_path))
            .collect::<Vec<_>>()
    };
    assert_eq!(on_path(&ta), on_path(&tb));
}

#[test]
fn coarse_search_is_cheaper_than_flooding() {
    let records = run_scenario(&random_dos(3)).unwrap();
    for rep in 0..3 {
        let of = |m: Method| {
            records
                .iter()
                .find(|r| r.rep == rep && r.method == m)
                .unwrap()
                .messages()
        };
        assert!(
            of(Method::Ct) <= of(Method::Flooding),
            "rep {rep}: {} > {}",
            of(Method::Ct),
            of(Method::Flooding)
        );
    }
}

#[test]
fn no_node_processes_a_session_twice() {
    let config = random_dos(1);
    for rep in 0..3 {
        let p = prepare(&config, rep).unwrap();
        let Ok(trace) = trace_dos_coarse(
            p.world.topology(),
            &p.observations,
            p.truth.victim,
            &traceback_config(&config),
        ) else {
            continue;
        };
        assert!(trace.log.iter().all(|m| m.sn == 1));
        // a node relays someone else's vicinity query at most once; it may
        // broadcast once more as a contact of its own
        let mut processed = BTreeSet::new();
        for r in &trace.regions {
            for &(n, _) in &r.region {
                assert!(processed.insert(n), "{n} processed twice");
            }
        }
        assert_eq!(trace.overhead.processing, processed.len() as u64);
        let broadcasts = trace
            .log
            .iter()
            .filter(|m| m.kind == MessageKind::VicinityQuery)
            .count();
        assert!(broadcasts <= processed.len() + trace.regions.len());
        let contacts: BTreeSet<NodeId> = trace.regions.iter().map(|r| r.contact).collect();
        assert_eq!(contacts.len(), trace.regions.len());
    }
}

#[test]
fn search_cost_follows_attacker_distance_not_network_size() {
    let cost = |config: ScenarioConfig| {
        let p = prepare(&config, 0).unwrap();
        let trace = trace_dos_coarse(
            p.world.topology(),
            &p.observations,
            p.truth.victim,
            &traceback_config(&config),
        )
        .unwrap();
        trace.overhead.messages()
    };
    let near_small = cost(line(20, 6));
    let near_large = cost(line(40, 6));
    let far_large = cost(line(40, 18));
    assert!(
        (near_large as f64) <= 1.25 * near_small as f64,
        "{near_small} vs {near_large}"
    );
    assert!(far_large > near_large, "{near_large} vs {far_large}");
}

#[test]
fn fine_succeeds_wherever_coarse_does() {
    for preset in ["line-dos", "grid-dos"] {
        let config = ScenarioConfig {
            repetitions: 3,
            methods: vec![Method::Ct, Method::Ft],
            ..ScenarioConfig::preset(preset).unwrap()
        };
        let records = run_scenario(&config).unwrap();
        for rep in 0..3 {
            let of = |m: Method| {
                records
                    .iter()
                    .find(|r| r.rep == rep && r.method == m)
                    .unwrap()
                    .success
            };
            if of(Method::Ct) == Some(true) {
                assert_eq!(of(Method::Ft), Some(true), "{preset} rep {rep}");
            }
        }
    }
}

#[test]
fn simultaneous_ddos_is_never_called_mobile() {
    for preset in ["clustered-ddos", "spread-ddos"] {
        let config = ScenarioConfig {
            repetitions: 3,
            ..ScenarioConfig::preset(preset).unwrap()
        };
        for r in run_scenario(&config).unwrap() {
            assert_ne!(
                r.class,
                Some(AttackClass::MobileDoS),
                "{preset} rep {}",
                r.rep
            );
        }
    }
}
