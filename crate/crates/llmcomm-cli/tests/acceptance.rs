//! Acceptance gate: eight criteria, each a test that prints one PASS line.
//!
//! Every numeric target here is pinned with an explicit tolerance. A failure
//! in any criterion is a release blocker, so these tests prefer loud exact
//! assertions over clever abstractions.

use std::collections::{BTreeMap, BTreeSet};
use std::process::Command;
use std::time::Instant;

use llmcomm::costmodel::{breakeven_messages, CostParams, CostReport};
use llmcomm::ids::{NodeId, UserId};
use llmcomm::lifecycle::TrainingSpec;
use llmcomm::metrics::{compare, summarize, Reduction};
use llmcomm::netsim::engine::run;
use llmcomm::netsim::topology::{Link, LinkClass, NodeKind, Topology};
use llmcomm::netsim::trace::{Trace, TraceKind};
use llmcomm::protocol::{has_disclosure, DrainPolicy, RoutingAction, StatusKind};
use llmcomm::responder::{service_time, Fact, ServiceProfile, Stage, Visibility};
use llmcomm::scenario::{ModelConfig, Propagation, Scenario, Settings, UserConfig};
use llmcomm::scenarios;
use llmcomm::workload::{
    generate, sample_exponential, ArrivalProcess, FlowSpec, SplitMix64, WorkloadEvent,
    WorkloadSpec,
};

#[test]
fn acceptance_1_trace_determinism() {
    // Ten seeds, every run repeated, scenario and baseline: byte-identical.
    let mut v: serde_json::Value = serde_json::from_str(scenarios::FIG1).unwrap();
    v["flows"][0]["arrivals"] = serde_json::json!("poisson");
    v["flows"][1]["arrivals"] = serde_json::json!("poisson");
    let text = v.to_string();

    let mut previous: Option<String> = None;
    for seed in 0..10u64 {
        let s = Scenario::from_json_with_seed(&text, Some(seed)).unwrap();
        let first = run(&s, false).unwrap().trace.to_jsonl();
        let second = run(&s, false).unwrap().trace.to_jsonl();
        assert_eq!(first, second, "seed {seed}: scenario runs must match byte for byte");
        let base_first = run(&s, true).unwrap().trace.to_jsonl();
        let base_second = run(&s, true).unwrap().trace.to_jsonl();
        assert_eq!(base_first, base_second, "seed {seed}: baseline runs must match");
        if let Some(prev) = &previous {
            assert_ne!(prev, &first, "seed {seed} must not replay seed {}", seed - 1);
        }
        previous = Some(first);
    }
    println!("ACCEPTANCE 1 trace_determinism: PASS");
}

#[test]
fn acceptance_2_service_time_table() {
    let p = ServiceProfile::default();
    let text_cold = service_time(&p, &[Stage::Text], true).unwrap();
    let text_warm = service_time(&p, &[Stage::Text], false).unwrap();
    let tts_cold = service_time(&p, &[Stage::Tts], true).unwrap();
    let tts_warm = service_time(&p, &[Stage::Tts], false).unwrap();
    let both_cold = service_time(&p, &[Stage::Text, Stage::Tts], true).unwrap();
    let both_warm = service_time(&p, &[Stage::Text, Stage::Tts], false).unwrap();

    // Per-stage times are exact sums of the measured load and process parts.
    assert_eq!(text_cold, 16.26);
    assert_eq!(text_warm, 9.64);
    assert_eq!(tts_cold, 0.44);
    assert_eq!(tts_warm, 0.18);
    // The combined pipeline is exactly additive in f64...
    assert_eq!(both_cold, 16.26 + 0.44);
    assert_eq!(both_warm, 9.64 + 0.18);
    // ...and lands on the published total within numeric noise.
    assert!((both_cold - 16.70).abs() < 1e-9, "cold total {both_cold}");
    println!("ACCEPTANCE 2 service_time_table: PASS");
}

#[test]
fn acceptance_3_training_cost_sheet() {
    let params = CostParams::default();

    let small = CostReport::compute(184_320.0, &params).unwrap();
    assert_eq!(small.usd, 184_320.0);
    assert_eq!(small.kwh, 73_728.0);
    assert!(
        (small.tco2eq - 31.22).abs() / 31.22 < 0.005,
        "fine-tune carbon {} vs 31.22",
        small.tco2eq
    );

    let large = CostReport::compute(1_720_320.0, &params).unwrap();
    assert_eq!(large.usd, 1_720_320.0);
    assert_eq!(large.kwh, 688_128.0);
    assert!(
        (large.tco2eq - 291.42).abs() / 291.42 < 0.005,
        "from-scratch carbon {} vs 291.42",
        large.tco2eq
    );

    assert_eq!(breakeven_messages(13_500_000_000, 2048).unwrap(), 6_591_797);
    println!("ACCEPTANCE 3 training_cost_sheet: PASS");
}

#[test]
fn acceptance_4_reference_scenario_replay() {
    let s = Scenario::from_json(scenarios::FIG1).unwrap();
    let out = run(&s, false).unwrap();
    let report = summarize(&out.trace);

    // Model lifecycle milestones land exactly where the arithmetic says.
    let trained = out
        .trace
        .entries
        .iter()
        .find(|e| e.kind == TraceKind::TrainingComplete)
        .expect("training completes");
    assert_eq!(trained.at, 1.8, "184320 GPUh fine-tuned across 1024 GPUs");
    let placements: Vec<_> = out
        .trace
        .entries
        .iter()
        .filter(|e| e.kind == TraceKind::TransferComplete && e.note.as_deref() == Some("placement"))
        .collect();
    assert_eq!(placements.len(), 2);
    for p in &placements {
        assert!((p.at - 2.89).abs() < 1e-9, "placement at {}", p.at);
        assert_eq!(p.model_bytes, 13_500_000_000);
    }

    // Serving at the sender's own edge: no core traffic, cold start once.
    let served: Vec<_> = out
        .trace
        .entries
        .iter()
        .filter(|e| e.action == Some(RoutingAction::LLMServe))
        .collect();
    assert_eq!(served.len(), 5);
    for e in &served {
        assert_eq!(e.serving_node, Some(NodeId::from("edge1")));
        assert_eq!(e.core_bytes, 0);
    }
    assert!((served[0].service_s - 16.26).abs() < 1e-12);
    for e in &served[1..] {
        assert!((e.service_s - 9.64).abs() < 1e-12);
    }

    // Forwarded messages pay the two-hop core path both ways.
    let forwarded: Vec<_> = out
        .trace
        .entries
        .iter()
        .filter(|e| e.action == Some(RoutingAction::ForwardToRecipient))
        .collect();
    assert_eq!(forwarded.len(), 2);
    for e in &forwarded {
        assert_eq!(e.core_bytes, 2 * 256);
        assert_eq!(e.access_bytes, 2 * 256 + 2 * 64);
    }

    // The owner's replies taught the model: version 1 -> 3.
    assert_eq!(out.registry.latest_version(&UserId::from("carol")), 3);

    // Exactly one disclosed log record per served answer.
    assert_eq!(out.logs.len() as u64, report.llm_served);
    for rec in out.logs.records() {
        assert!(has_disclosure(&rec.response));
        assert_eq!(rec.model_version, 1, "the edge replica lags until the batch window");
    }

    // And the run beats its own baseline on core traffic.
    let base = summarize(&run(&s, true).unwrap().trace);
    assert_eq!(base.core_bytes, 3886);
    assert_eq!(report.core_bytes, 1116);
    println!("ACCEPTANCE 4 reference_scenario_replay: PASS");
}

#[test]
fn acceptance_5_traffic_breakeven() {
    // The flip point is the model size over the per-exchange core bytes.
    let predicted = breakeven_messages(13_500_000_000, 8_000_000).unwrap();
    assert_eq!(predicted, 1688);

    let mut flip_at: Option<u64> = None;
    let mut last: Option<(u64, f64)> = None;
    for duration in ["18.855", "18.865", "18.875", "18.885", "18.895"] {
        let mut v: serde_json::Value = serde_json::from_str(scenarios::BREAKEVEN).unwrap();
        v["duration_s"] = serde_json::json!(duration.parse::<f64>().unwrap());
        let s = Scenario::from_json(&v.to_string()).unwrap();
        let scen = summarize(&run(&s, false).unwrap().trace);
        let base = summarize(&run(&s, true).unwrap().trace);

        // Heavy, fully answerable traffic: the core reduction excluding the
        // one-time model shipment is total.
        assert!(scen.messages_sent >= 1000);
        assert_eq!(scen.llm_served, scen.messages_sent);
        let excl = match compare(&base, &scen, false).reduction {
            Reduction::Pct(p) => p,
            _ => panic!("baseline moved no core bytes"),
        };
        assert!(excl > 0.0);
        assert_eq!(excl, 100.0, "all exchanges served at the sender's edge");

        let incl = match compare(&base, &scen, true).reduction {
            Reduction::Pct(p) => p,
            _ => panic!("baseline moved no core bytes"),
        };
        if let Some((n_prev, incl_prev)) = last {
            assert_eq!(scen.messages_sent, n_prev + 1, "sweep steps one exchange at a time");
            if incl_prev < 0.0 && incl >= 0.0 {
                flip_at = Some(scen.messages_sent);
            }
        }
        last = Some((scen.messages_sent, incl));
    }
    let flip = flip_at.expect("the sweep must cross break-even");
    assert!(
        flip.abs_diff(predicted) <= 1,
        "sign flip at {flip} exchanges, predicted {predicted}"
    );
    println!("ACCEPTANCE 5 traffic_breakeven: PASS");
}

#[test]
fn acceptance_6_cli_turnaround() {
    let bin = env!("CARGO_BIN_EXE_llmcomm");
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let mut invocations = 0;
    for i in 0..5 {
        for args in [
            vec!["validate", "--scenario", "fig1"],
            vec!["routes"],
            vec!["cost", "--gpu-hours", "184320"],
        ] {
            let out = Command::new(bin).args(&args).output().unwrap();
            assert!(out.status.success(), "{args:?} failed");
            invocations += 1;
        }
        let out_dir = dir.path().join(format!("run-{i}"));
        let out = Command::new(bin)
            .args(["run", "--scenario", "fig1", "--out", out_dir.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(out.status.success());
        invocations += 1;
    }
    let elapsed = started.elapsed();
    assert_eq!(invocations, 20);
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "20 CLI invocations took {:.2}s, budget is 30s",
        elapsed.as_secs_f64()
    );
    println!("ACCEPTANCE 6 cli_turnaround: PASS");
}

// ---------------------------------------------------------------------------
// Criterion 7: bulk randomized mini-scenarios, built directly as structs.

const TOPIC_POOL: [&str; 4] = ["lunch", "weekend", "meds", "trip"];

struct Gen {
    rng: SplitMix64,
}

impl Gen {
    fn pick(&mut self, n: usize) -> usize {
        (self.rng.next_u64() % n as u64) as usize
    }
    fn chance(&mut self, p: f64) -> bool {
        self.rng.next_unit() <= p
    }
    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.rng.next_unit() * (hi - lo)
    }
}

fn mini_topology(n_users: usize) -> Topology {
    let mut nodes = vec![
        (NodeId::from("dc"), NodeKind::Datacenter),
        (NodeId::from("e0"), NodeKind::Edge),
        (NodeId::from("e1"), NodeKind::Edge),
    ];
    let mut links = vec![
        Link {
            a: NodeId::from("e0"),
            b: NodeId::from("dc"),
            latency_s: 0.01,
            bandwidth_bps: 1e10,
            class: LinkClass::Core,
        },
        Link {
            a: NodeId::from("e1"),
            b: NodeId::from("dc"),
            latency_s: 0.012,
            bandwidth_bps: 1e10,
            class: LinkClass::Core,
        },
    ];
    let mut attachment = BTreeMap::new();
    for i in 0..n_users {
        let dev = NodeId::from(format!("d{i}").as_str());
        let edge = NodeId::from(if i % 2 == 0 { "e0" } else { "e1" });
        nodes.push((dev.clone(), NodeKind::Device));
        links.push(Link {
            a: dev.clone(),
            b: edge.clone(),
            latency_s: 0.004,
            bandwidth_bps: 1e9,
            class: LinkClass::Access,
        });
        attachment.insert(dev, edge);
    }
    Topology::new(nodes, links, attachment).expect("generator topologies are valid")
}

/// One random, always-valid mini scenario. Small enough that thousands run
/// in seconds, varied enough to hit every routing and lifecycle path.
fn mini_scenario(seed: u64) -> Scenario {
    let mut g = Gen { rng: SplitMix64::new(seed) };
    let n_users = 2 + g.pick(3);
    let duration = 8.0 + g.range(0.0, 16.0);
    let user_id = |i: usize| UserId::from(format!("u{i}").as_str());

    let mut users = BTreeMap::new();
    for i in 0..n_users {
        let mut allowlist = BTreeSet::new();
        for j in 0..n_users {
            if j != i && g.chance(0.3) {
                allowlist.insert(user_id(j));
            }
        }
        let mut schedule = Vec::new();
        for _ in 0..g.pick(3) {
            let at = g.range(0.0, duration);
            let kind = StatusKind::ALL[g.pick(4)];
            schedule.push((at, kind));
        }
        let model = g.chance(0.6).then(|| {
            let mut facts = BTreeMap::new();
            for topic in TOPIC_POOL {
                if !g.chance(0.5) {
                    continue;
                }
                let visibility = match g.pick(5) {
                    0 => Visibility::Private,
                    1 => {
                        let mut members = BTreeSet::new();
                        members.insert(user_id((i + 1) % n_users));
                        Visibility::Group(members)
                    }
                    _ => Visibility::Public,
                };
                facts.insert(
                    topic.to_string(),
                    Fact { response: format!("about {topic}: noted"), visibility },
                );
            }
            let mut placements = Vec::new();
            if g.chance(0.5) {
                placements.push(NodeId::from("e0"));
            }
            if g.chance(0.5) {
                placements.push(NodeId::from("e1"));
            }
            let training = g.chance(0.4).then(|| TrainingSpec {
                owner: user_id(i),
                gpu_hours: 512.0 * (1 + g.pick(8)) as f64,
                from_pretrained: g.chance(0.5),
                target_ppl: None,
            });
            ModelConfig {
                size_bytes: 1_000_000 * (1 + g.pick(50)) as u64,
                facts,
                profile: ServiceProfile::default(),
                placements,
                training,
            }
        });
        users.insert(
            user_id(i),
            UserConfig {
                device: NodeId::from(format!("d{i}").as_str()),
                allowlist,
                schedule,
                model,
            },
        );
    }

    let splits: [&[f64]; 3] = [&[1.0], &[0.5, 0.5], &[0.5, 0.25, 0.25]];
    let mut flows = Vec::new();
    for _ in 0..1 + g.pick(2) {
        let sender = g.pick(n_users);
        let recipient = (sender + 1 + g.pick(n_users - 1)) % n_users;
        let split = splits[g.pick(3)];
        let offset = g.pick(TOPIC_POOL.len());
        let mut topics = BTreeMap::new();
        for (k, p) in split.iter().enumerate() {
            topics.insert(TOPIC_POOL[(offset + k) % TOPIC_POOL.len()].to_string(), *p);
        }
        flows.push(FlowSpec {
            sender: user_id(sender),
            recipient: user_id(recipient),
            rate_per_s: 0.1 + g.range(0.0, 0.5),
            msg_bytes: 16 + g.pick(512) as u64,
            topics,
            arrivals: if g.chance(0.5) { ArrivalProcess::Periodic } else { ArrivalProcess::Poisson },
            start_s: g.pick(5) as f64,
        });
    }

    let settings = Settings {
        control_bytes: 64,
        serve_stages: vec![Stage::Text],
        human_reply_delay_s: g.range(0.2, 5.0),
        human_reply_bytes: None,
        propagation: if g.chance(0.5) {
            Propagation::Immediate
        } else {
            Propagation::Batch { interval_s: 2.0 + g.range(0.0, 10.0) }
        },
        training: Default::default(),
        drain_policy: if g.chance(0.5) {
            DrainPolicy::DelegateIfAnswerable
        } else {
            DrainPolicy::AlwaysHuman
        },
        horizon_s: g.chance(0.1).then_some(duration * 0.8),
    };

    Scenario {
        seed,
        duration_s: duration,
        topology: mini_topology(n_users),
        users,
        flows,
        p_answerable_unknown: if g.chance(0.5) { g.range(0.0, 0.5) } else { 0.0 },
        settings,
    }
}

fn check_scenario_invariants(scenario: &Scenario, case: u64, round_trip: bool) {
    let out = run(scenario, false).unwrap();
    let report = summarize(&out.trace);

    assert_eq!(
        report.messages_sent,
        report.delivered_direct + report.llm_served + report.forwarded + report.held,
        "case {case}: every message resolves exactly one way"
    );

    let horizon = scenario.settings.horizon_s;
    for e in &out.trace.entries {
        if e.note.as_deref() == Some("dropped_beyond_horizon") {
            continue;
        }
        if e.kind == TraceKind::MessageArrival {
            match e.action.unwrap() {
                RoutingAction::LLMServe => {
                    assert!(
                        matches!(e.owner_status, Some(StatusKind::Busy | StatusKind::Away)),
                        "case {case}: served while {:?}",
                        e.owner_status
                    );
                }
                RoutingAction::HoldInactive => {
                    assert_eq!(e.owner_status, Some(StatusKind::Inactive), "case {case}");
                }
                RoutingAction::DeliverDirect => {
                    assert!(
                        matches!(e.owner_status, Some(StatusKind::Active | StatusKind::Busy)),
                        "case {case}"
                    );
                }
                RoutingAction::ForwardToRecipient => {
                    assert!(
                        matches!(e.owner_status, Some(StatusKind::Busy | StatusKind::Away)),
                        "case {case}"
                    );
                }
            }
        }
    }

    assert_eq!(
        out.logs.len() as u64,
        report.llm_served + report.drained_delegated,
        "case {case}: one log record per model-answered message"
    );
    for rec in out.logs.records() {
        assert!(has_disclosure(&rec.response), "case {case}: undisclosed model reply");
    }

    let owners: Vec<UserId> = out.registry.owners().cloned().collect();
    for owner in &owners {
        let latest = out.registry.latest_version(owner);
        assert!(latest >= 1, "case {case}: registered owners have at least v1");
        for v in 1..=latest {
            assert!(
                out.registry.model_at(owner, v).is_ok(),
                "case {case}: version history has a hole at v{v}"
            );
        }
        if horizon.is_none() {
            // With every event executed, replicas converge to the latest
            // learned version by the time the queue drains.
            for (node, v) in out.registry.replicas(owner) {
                assert_eq!(
                    v, latest,
                    "case {case}: stale replica v{v} (latest v{latest}) at {node}"
                );
            }
        }
    }

    if horizon.is_none() {
        assert_eq!(
            report.human_replies,
            report.delivered_direct + report.forwarded + report.drained_human,
            "case {case}: each humanly handled message draws exactly one reply"
        );
    }

    let base = run(scenario, true).unwrap();
    let base_report = summarize(&base.trace);
    assert_eq!(base_report.messages_sent, base_report.delivered_direct, "case {case}");
    assert_eq!(base_report.model_transfer_bytes, 0, "case {case}");
    assert!(base.logs.is_empty(), "case {case}");
    assert!(base.registry.owners().next().is_none(), "case {case}");
    assert_eq!(
        base_report.messages_sent, report.messages_sent,
        "case {case}: both modes replay the identical workload"
    );

    if round_trip {
        let jsonl = out.trace.to_jsonl();
        let replayed = Trace::parse_jsonl(&jsonl).unwrap();
        assert_eq!(replayed.to_jsonl(), jsonl, "case {case}: trace wire round trip");
    }
}

#[test]
fn acceptance_7_randomized_invariants() {
    const CASES: u64 = 10_000;
    for case in 0..CASES {
        let scenario = mini_scenario(case);
        check_scenario_invariants(&scenario, case, case % 100 == 0);
    }
    println!("ACCEPTANCE 7 randomized_invariants: PASS ({CASES} scenarios)");
}

#[test]
fn acceptance_8_workload_statistics() {
    // Exponential gaps: mean within 1% at rate 2 over 200k draws.
    let mut rng = SplitMix64::new(2024);
    let n = 200_000;
    let mut sum = 0.0;
    for _ in 0..n {
        sum += sample_exponential(2.0, &mut rng).unwrap();
    }
    let mean = sum / n as f64;
    assert!((mean - 0.5).abs() < 0.005, "exponential mean {mean} vs 0.5");

    // Topic mix and unknown-rate of a long Poisson flow track their
    // configured probabilities.
    let spec = WorkloadSpec {
        seed: 99,
        duration_s: 20_000.0,
        flows: vec![FlowSpec {
            sender: UserId::from("a"),
            recipient: UserId::from("c"),
            rate_per_s: 1.0,
            msg_bytes: 64,
            topics: BTreeMap::from([("lunch".to_string(), 0.75), ("trip".to_string(), 0.25)]),
            arrivals: ArrivalProcess::Poisson,
            start_s: 0.0,
        }],
        status_schedule: vec![],
        p_answerable_unknown: 0.3,
    };
    let events = generate(&spec).unwrap();
    let mut total = 0u64;
    let mut unknown = 0u64;
    let mut lunch = 0u64;
    for ev in &events {
        if let WorkloadEvent::Arrival(m) = ev {
            total += 1;
            if m.topic.starts_with("__") {
                unknown += 1;
            } else if m.topic == "lunch" {
                lunch += 1;
            }
        }
    }
    let expected = 20_000.0;
    assert!(
        (total as f64 - expected).abs() < 600.0,
        "Poisson count {total} vs {expected} (4+ sigma)"
    );
    let unknown_rate = unknown as f64 / total as f64;
    assert!((unknown_rate - 0.3).abs() < 0.015, "unknown rate {unknown_rate} vs 0.3");
    let lunch_rate = lunch as f64 / (total - unknown) as f64;
    assert!((lunch_rate - 0.75).abs() < 0.015, "topic mix {lunch_rate} vs 0.75");
    println!("ACCEPTANCE 8 workload_statistics: PASS");
}
