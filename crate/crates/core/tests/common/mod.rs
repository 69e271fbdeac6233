#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hetsim::config::InstanceSpec;
use hetsim::engine::SimulationInstance;
use serde_json::{json, Value};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn device(id: &str, performance: f64, ncores: u32, idle: f64, peak: f64) -> Value {
    json!({"id": id, "kind": "x", "performance": performance, "ncores": ncores, "p_idle_w": idle, "p_peak_w": peak})
}

fn link(id: &str, a: &str, b: &str, (startup, bw): (f64, f64)) -> Value {
    json!({"id": id, "a": a, "b": b, "t_startup_s": startup, "bandwidth_bps": bw})
}

fn with_role(args: &Value, role: &str) -> Value {
    let mut a = args.clone();
    a["role"] = json!(role);
    a
}

fn process(name: &str, behavior: &str, args: Value, count: usize) -> Value {
    json!({"name": name, "behavior": behavior, "args": args, "r_min": count, "r_max": count})
}

fn build(devices: Vec<Value>, links: Vec<Value>, processes: Vec<Value>, cells: Vec<(String, &str)>) -> SimulationInstance {
    let caps: Vec<Value> = cells.iter().map(|(d, p)| json!({"device": d, "process": p, "max": 1})).collect();
    let mapping: Vec<Value> = cells.iter().map(|(d, p)| json!({"device": d, "process": p, "count": 1})).collect();
    let doc = json!({
        "system": {"devices": devices, "links": links},
        "application": {"processes": processes, "capabilities": caps},
        "mapping": mapping,
    });
    InstanceSpec::from_value(&doc, Path::new(".")).unwrap().instance().unwrap()
}

/// A master on `host` and one slave per worker `w<i>` with the given speed.
///
/// With `store` set, a `store` device is linked to every worker and hosts
/// the data store; the prefetching behavior also gets one fetcher per worker.
pub fn farm(behavior: &str, speeds: &[f64], host_link: (f64, f64), store: Option<(f64, f64)>, args: Value) -> SimulationInstance {
    let n = speeds.len();
    let mut devices = vec![device("host", 1e9, 4, 20.0, 60.0)];
    let mut links = Vec::new();
    let mut cells = vec![("host".to_string(), "master")];
    let prefetch = behavior == "task_farm_prefetch";
    for (i, &s) in speeds.iter().enumerate() {
        let w = format!("w{i}");
        devices.push(device(&w, s, 1, 70.0, 140.0));
        links.push(link(&format!("h{i}"), "host", &w, host_link));
        if let Some(sl) = store {
            links.push(link(&format!("s{i}"), "store", &w, sl));
        }
        cells.push((w.clone(), "slave"));
        if prefetch {
            cells.push((w, "fetcher"));
        }
    }
    let mut processes = vec![
        process("master", behavior, with_role(&args, "master"), 1),
        process("slave", behavior, with_role(&args, "slave"), n),
    ];
    if store.is_some() {
        devices.push(device("store", 1.0, 1, 0.0, 0.0));
        processes.push(process("store", behavior, with_role(&args, "store"), 1));
        cells.push(("store".into(), "store"));
    }
    if prefetch {
        processes.push(process("fetcher", behavior, with_role(&args, "fetcher"), n));
    }
    build(devices, links, processes, cells)
}

/// Master on `host`, `k` GPUs of the given performance.
pub fn dnn(k: usize, performance: f64, host_link: (f64, f64), args: Value) -> SimulationInstance {
    let mut devices = vec![device("host", 1e9, 4, 0.0, 0.0)];
    let mut links = Vec::new();
    let mut cells = vec![("host".to_string(), "master")];
    for i in 0..k {
        let g = format!("g{i}");
        devices.push(device(&g, performance, 1, 70.0, 140.0));
        links.push(link(&format!("l{i}"), "host", &g, host_link));
        cells.push((g, "slave"));
    }
    let processes = vec![
        process("master", "dnn_training", with_role(&args, "master"), 1),
        process("slave", "dnn_training", with_role(&args, "slave"), k),
    ];
    build(devices, links, processes, cells)
}

/// Greedy list scheduling of `work` units onto workers with `speeds`, in
/// package order: each package goes to the worker that becomes free first
/// (lowest index on ties). The first round hands one package to every
/// worker in index order.
pub fn list_schedule(work: &[f64], speeds: &[f64]) -> f64 {
    list_schedule_checked(work, speeds).0
}

/// Like [`list_schedule`], also reporting whether some choice was between
/// workers of different speeds that free up at the same time up to rounding.
/// There the outcome depends on how each side rounds.
pub fn list_schedule_checked(work: &[f64], speeds: &[f64]) -> (f64, bool) {
    let mut free = vec![0.0f64; speeds.len()];
    let mut ambiguous = false;
    for &w in work {
        let (i, t) = free
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, &t)| if t < best.1 { (i, t) } else { best });
        ambiguous |= t > 0.0
            && (0..free.len()).any(|j| j != i && speeds[j] != speeds[i] && rel_close(free[j], t, 1e-9));
        free[i] += w / speeds[i];
    }
    (free.into_iter().fold(0.0, f64::max), ambiguous)
}
