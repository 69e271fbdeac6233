use super::*;
use crate::model::{Bound, Device, NetworkLink, ProcessImpl};
use proptest::prelude::*;

fn tiny_system(linked: bool) -> SystemModel {
    let devices = vec![
        Device { id: "cpu0".into(), kind: "cpu".into(), performance: 1e9, ncores: 4, p_idle: 20.0, p_peak: 60.0 },
        Device { id: "gpu0".into(), kind: "gpu".into(), performance: 1e10, ncores: 1, p_idle: 70.0, p_peak: 140.0 },
    ];
    let links = if linked {
        vec![NetworkLink {
            id: "l0".into(),
            endpoint_a: "cpu0".into(),
            endpoint_b: "gpu0".into(),
            t_startup: 0.0,
            bandwidth: 1e6,
        }]
    } else {
        vec![]
    };
    SystemModel::new(devices, links).unwrap()
}

fn script(name: &str, ops: serde_json::Value) -> ProcessImpl {
    let args = serde_json::json!({ "ops": ops }).as_object().unwrap().clone();
    ProcessImpl {
        name: name.into(),
        behavior: "op_list".into(),
        args,
        r_min: 0,
        r_max: Bound::Unbounded,
        count_param: None,
    }
}

/// One instance per (process, device) pair.
fn instance(system: SystemModel, procs: Vec<(ProcessImpl, &str)>) -> SimulationInstance {
    let mut caps = Capabilities::new();
    let mut mapping = Mapping::new();
    for (p, d) in &procs {
        caps.set(d, &p.name, 1);
        mapping.set(d, &p.name, 1);
    }
    SimulationInstance {
        system: Arc::new(system),
        app: Arc::new(Application::new(procs.into_iter().map(|(p, _)| p).collect()).unwrap()),
        caps: Arc::new(caps),
        mapping,
        params: ParamVector::new(),
    }
}

fn with_ops() -> SimOptions {
    SimOptions { record_ops: true, record_trace: true, ..SimOptions::default() }
}

fn tiny() -> SimulationInstance {
    let master = script(
        "master",
        serde_json::json!([{"send": "slave#0", "size": 1e6}, {"recv": "slave#0"}]),
    );
    let slave = script(
        "slave",
        serde_json::json!([{"recv": "master#0"}, {"compute": 2e10, "kind": "train"}, {"send": "master#0", "size": 1e6}]),
    );
    instance(tiny_system(true), vec![(master, "cpu0"), (slave, "gpu0")])
}

#[test]
fn tiny_scenario() {
    let r = tiny().run(&with_ops()).unwrap();
    assert_eq!(r.makespan, 4.0);
    assert_eq!(r.process_time("master#0").unwrap().total_s, 4.0);
    let ops = r.ops.as_ref().unwrap();
    let master_recv = ops.iter().filter(|o| o.instance == "master#0").nth(1).unwrap();
    assert_eq!(master_recv.duration(), 3.0);
    assert_eq!(r.extra_energy, 140.0);
    assert_eq!(r.per_device_energy["gpu0"] - 70.0 * 4.0, 140.0);
    assert_eq!(r.avg_power, 125.0);
    assert_eq!(r.max_power, 160.0);
    let peak = r.segments.iter().find(|s| s.power == 160.0).unwrap();
    assert_eq!((peak.start, peak.end), (1.0, 3.0));

    let all = tiny().run(&SimOptions { idle_scope: IdleScope::All, ..SimOptions::default() }).unwrap();
    assert_eq!(all.avg_power, 125.0);
}

#[test]
fn rendezvous_charges_waiting_to_the_early_side() {
    // the receiver computes for 2 s before posting; the transfer takes 1 s
    let a = script("a", serde_json::json!([{"send": "b#0", "size": 1e6}]));
    let b = script("b", serde_json::json!([{"compute": 2e10, "kind": "work"}, {"recv": "a#0"}]));
    let res = instance(tiny_system(true), vec![(a, "cpu0"), (b, "gpu0")]).run(&with_ops()).unwrap();
    let ops = res.ops.unwrap();
    let send = ops.iter().find(|o| o.instance == "a#0").unwrap();
    let recv = ops.iter().find(|o| o.instance == "b#0" && o.kind == OpKind::Comm).unwrap();
    assert_eq!((send.start, send.end), (0.0, 3.0));
    assert_eq!(recv.duration(), 1.0);
    assert_eq!(res.makespan, 3.0);
}

#[test]
fn same_channel_is_fifo() {
    let a = script(
        "a",
        serde_json::json!([{"multi": [{"send": "b#0", "size": 1e6}, {"send": "b#0", "size": 2e6}]}]),
    );
    let b = script("b", serde_json::json!([{"recv": "a#0"}, {"recv": "a#0"}]));
    let res = instance(tiny_system(true), vec![(a, "cpu0"), (b, "gpu0")]).run(&with_ops()).unwrap();
    let durations: Vec<f64> =
        res.ops.unwrap().iter().filter(|o| o.instance == "b#0").map(OpRecord::duration).collect();
    assert_eq!(durations, vec![1.0, 2.0]);
}

#[test]
fn mismatched_tags_deadlock() {
    let a = script("a", serde_json::json!([{"send": "b#0", "size": 1, "tag": 1}]));
    let b = script("b", serde_json::json!([{"recv": "a#0", "tag": 2}]));
    let err = instance(tiny_system(true), vec![(a, "cpu0"), (b, "gpu0")]).run(&SimOptions::default()).unwrap_err();
    let SimError::Deadlock { blocked, .. } = err else { panic!("{err}") };
    assert_eq!(blocked.len(), 2);
    assert!(blocked[0].starts_with("a#0"));
    assert!(blocked[1].contains("recv from a#0 tag 2"));
}

#[test]
fn empty_schedule() {
    let a = script("a", serde_json::json!([]));
    let b = script("b", serde_json::json!([]));
    let res = instance(tiny_system(false), vec![(a, "cpu0"), (b, "gpu0")]).run(&SimOptions::default()).unwrap();
    assert_eq!(res.makespan, 0.0);
    assert_eq!(res.avg_power, 90.0);
    assert_eq!(res.max_power, 90.0);
}

#[test]
fn unroutable_pair_is_reported() {
    let a = script("a", serde_json::json!([{"send": "b#0", "size": 1}]));
    let b = script("b", serde_json::json!([{"recv": "*"}]));
    let err = instance(tiny_system(false), vec![(a, "cpu0"), (b, "gpu0")]).run(&SimOptions::default()).unwrap_err();
    assert!(matches!(err, SimError::Unroutable { ref from, ref to } if from == "cpu0" && to == "gpu0"), "{err}");
}

#[test]
fn same_device_messages_are_free() {
    let a = script("a", serde_json::json!([{"send": "b#0", "size": 1e12}]));
    let b = script("b", serde_json::json!([{"recv": "a"}]));
    let res = instance(tiny_system(false), vec![(a, "gpu0"), (b, "gpu0")]).run(&SimOptions::default()).unwrap();
    assert_eq!(res.makespan, 0.0);
}

#[test]
fn infeasible_mapping_is_rejected() {
    let mut inst = tiny();
    inst.mapping.set("gpu0", "slave", 2);
    let err = inst.run(&SimOptions::default()).unwrap_err();
    assert!(matches!(err, SimError::InvalidMapping(ref v) if v.len() == 1), "{err}");
}

#[test]
fn runs_are_bitwise_identical() {
    let a = tiny().run(&with_ops()).unwrap();
    let b = tiny().run(&with_ops()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trace.as_ref().unwrap().to_csv(), b.trace.as_ref().unwrap().to_csv());
}

#[test]
fn multiple_instances_share_power_not_time() {
    let procs = vec![script("w", serde_json::json!([{"compute": 4e9, "kind": "k"}]))];
    let mut inst = instance(tiny_system(false), procs.into_iter().map(|p| (p, "cpu0")).collect());
    Arc::get_mut(&mut inst.caps).unwrap().set("cpu0", "w", 4);
    inst.mapping.set("cpu0", "w", 2);
    let res = inst.run(&SimOptions::default()).unwrap();
    assert_eq!(res.makespan, 4.0);
    // 2 of 4 cores busy: 20 + 0.5 * 40
    assert_eq!(res.avg_power, 40.0);
}

proptest! {
    #[test]
    fn serial_chain_matches_the_analytic_sum(
        steps in prop::collection::vec((0.0f64..1e10, 0.0f64..1e7), 1..30),
    ) {
        // a computes, hands a token to b, b computes and hands it back
        let mut a_ops = Vec::new();
        let mut b_ops = Vec::new();
        let mut expected = 0.0;
        for (i, &(work, msg)) in steps.iter().enumerate() {
            let (me, other, mine, theirs) = if i % 2 == 0 {
                ("a", "b", &mut a_ops, &mut b_ops)
            } else {
                ("b", "a", &mut b_ops, &mut a_ops)
            };
            mine.push(serde_json::json!({"compute": work}));
            mine.push(serde_json::json!({"send": format!("{other}#0"), "size": msg}));
            theirs.push(serde_json::json!({"recv": format!("{me}#0")}));
            let perf = if me == "a" { 1e9 } else { 1e10 };
            expected += work / perf + msg / 1e6;
        }
        let inst = instance(
            tiny_system(true),
            vec![(script("a", a_ops.into()), "cpu0"), (script("b", b_ops.into()), "gpu0")],
        );
        let res = inst.run(&SimOptions::default()).unwrap();
        prop_assert!((res.makespan - expected).abs() <= 1e-9 * expected.max(1e-300));
        // conservation
        let energy: f64 = res.per_device_energy.values().sum();
        prop_assert!((res.avg_power * res.makespan - energy).abs() <= 1e-9 * energy.max(1e-300));
        for s in &res.segments {
            prop_assert!(s.power >= 90.0 - 1e-9 && s.power <= 200.0 + 1e-9);
        }
    }
}
