use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::{json, Value};
use tempfile::TempDir;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(rel)
}

fn hetsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetsim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_json(dir: &TempDir, name: &str, v: &Value) -> String {
    let p = dir.path().join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.display().to_string()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_tiny() {
    let out = hetsim(&["simulate", path(&fixture("tiny/instance.json"))]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["makespan_s"], json!(4.0));
    assert_eq!(doc["avg_power_w"], json!(125.0));
    assert_eq!(doc["max_power_w"], json!(160.0));
    assert_eq!(doc["process_time_s"]["slave#0"], json!(4.0));
}

#[test]
fn idle_scope_all_counts_every_device() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("r.json");
    let out = hetsim(&[
        "simulate",
        path(&fixture("dnn/instance.json")),
        "--idle-scope",
        "all",
        "--out",
        path(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).is_empty());
    let all: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    let alloc: Value = serde_json::from_str(&stdout(&hetsim(&["simulate", path(&fixture("dnn/instance.json"))]))).unwrap();
    // seven more GPUs idle at 70 W each
    let gap = all["avg_power_w"].as_f64().unwrap() - alloc["avg_power_w"].as_f64().unwrap();
    assert!((gap - 7.0 * 70.0).abs() < 1e-6, "{gap}");
}

#[test]
fn simulate_from_separate_files_with_params() {
    let d = fixture("dnn");
    let started = Instant::now();
    let out = hetsim(&[
        "simulate",
        "--system",
        path(&d.join("system.json")),
        "--application",
        path(&d.join("application.json")),
        "--mapping",
        "round_robin",
        "--param",
        "nslaves=1",
    ]);
    assert!(started.elapsed().as_secs_f64() < 5.0);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["params"]["nslaves"], json!(1));
    assert_eq!(doc["process_time_s"].as_object().unwrap().len(), 2);
}

#[test]
fn infeasible_mapping_exits_2_naming_the_clause() {
    let dir = TempDir::new().unwrap();
    let mapping = write_json(
        &dir,
        "m.json",
        &json!([{"device": "cpu0", "process": "master", "count": 1}, {"device": "gpu0", "process": "slave", "count": 2}]),
    );
    let out = hetsim(&["simulate", path(&fixture("tiny/instance.json")), "--mapping", &mapping]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("gpu0") && err.contains("slave"), "{err}");
    assert_eq!(err.lines().count(), 1);
    let out = hetsim(&["validate", path(&fixture("tiny/instance.json"))]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn deadlock_exits_3() {
    let dir = TempDir::new().unwrap();
    let mut app: Value = serde_json::from_str(&fs::read_to_string(fixture("tiny/application.json")).unwrap()).unwrap();
    app["processes"][0]["args"]["ops"] = json!([{"recv": "slave#0"}]);
    app["processes"][1]["args"]["ops"] = json!([{"recv": "master#0"}]);
    let app = write_json(&dir, "app.json", &app);
    let out = hetsim(&[
        "simulate",
        "--system",
        path(&fixture("tiny/system.json")),
        "--application",
        &app,
        "--mapping",
        path(&fixture("tiny/mapping.json")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("deadlock"));
}

#[test]
fn trace_is_written() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("t.csv");
    let out = hetsim(&["simulate", path(&fixture("tiny/instance.json")), "--trace", path(&trace)]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "time_s,device,delta_demand,label");
    assert_eq!(&lines[1..], ["1,gpu0,1,slave#0 train", "3,gpu0,-1,slave#0 train"]);
}

#[test]
fn dnn_sweep_is_all_pareto_and_worker_independent() {
    let suite = fixture("dnn/suite.json");
    let one = hetsim(&["sweep", path(&suite), "--workers", "1"]);
    let eight = hetsim(&["sweep", path(&suite), "--workers", "8"]);
    assert_eq!(one.status.code(), Some(0), "{}", stderr(&one));
    assert_eq!(one.stdout, eight.stdout);
    let text = stdout(&one);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("true")), "{text}");
}

#[test]
fn sweep_with_an_unroutable_point_exits_4() {
    let dir = TempDir::new().unwrap();
    let mut system: Value = serde_json::from_str(&fs::read_to_string(fixture("dnn/system.json")).unwrap()).unwrap();
    system["links"].as_array_mut().unwrap().retain(|l| l["id"] != "host1.cuda3");
    write_json(&dir, "system.json", &system);
    fs::copy(fixture("dnn/application.json"), dir.path().join("application.json")).unwrap();
    write_json(
        &dir,
        "instance.json",
        &json!({"system": "system.json", "application": "application.json", "params": {"nslaves": 1}}),
    );
    let suite = write_json(&dir, "suite.json", &json!({"base": "instance.json", "sweep": {"nslaves": {"from": 1, "to": 8}}}));
    let csv_path = dir.path().join("out.csv");
    let out = hetsim(&["sweep", &suite, "--out", path(&csv_path)]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("host1.gpu3"));
    let text = fs::read_to_string(csv_path).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows.iter().filter(|r| r.starts_with(",,false,")).count(), 1, "{text}");
}

#[test]
fn bad_suite_exits_2() {
    let dir = TempDir::new().unwrap();
    let suite = write_json(&dir, "s.json", &json!({"base": path(&fixture("dnn/instance.json")), "sweep": {"nslaves": {"from": 3, "to": 1}}}));
    assert_eq!(hetsim(&["sweep", &suite]).status.code(), Some(2));
    assert_eq!(hetsim(&["validate", &suite]).status.code(), Some(2));
    assert_eq!(hetsim(&["sweep", "/nonexistent/suite.json"]).status.code(), Some(2));
}

fn fit(rows: &[(f64, f64, f64)]) -> Output {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("s.csv");
    let mut text = String::from("data_size,performance,seconds\n");
    for (x, p, y) in rows {
        text.push_str(&format!("{x},{p},{y}\n"));
    }
    fs::write(&p, text).unwrap();
    hetsim(&["fit", path(&p)])
}

#[test]
fn fit_two_points_and_constant() {
    let out = fit(&[(1e10, 1e10, 3.0), (2e10, 1e10, 5.0)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!((doc["phi"].as_f64().unwrap(), doc["psi"].as_f64().unwrap(), doc["mpe"].as_f64().unwrap()), (2.0, 1.0, 0.0));

    let out = fit(&[(1e9, 1e9, 7.0), (3e9, 1e9, 7.0), (8e9, 1e9, 7.0)]);
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["phi"].as_f64().unwrap(), 0.0);
    assert_eq!(doc["psi"].as_f64().unwrap(), 7.0);
}

#[test]
fn fit_noisy_recovers_phi() {
    // deterministic +-1% pattern around phi=1.5, psi=0.2
    let rows: Vec<(f64, f64, f64)> = (0..40)
        .map(|i| {
            let x = 1e9 * f64::from(i + 1);
            let noise = [0.01, -0.01, 0.005, -0.005][i as usize % 4];
            (x, 1e9, (1.5 * x / 1e9 + 0.2) * (1.0 + noise))
        })
        .collect();
    let doc: Value = serde_json::from_str(&stdout(&fit(&rows))).unwrap();
    assert!((doc["phi"].as_f64().unwrap() - 1.5).abs() / 1.5 < 0.05);
    assert!((doc["psi"].as_f64().unwrap() - 0.2).abs() < 0.05);
}

#[test]
fn fit_singular_exits_2() {
    let out = fit(&[(1e9, 1e9, 1.0), (1e9, 1e9, 2.0)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!stderr(&out).is_empty());
}

fn select(limit: &str, extra: &[&str]) -> Output {
    let d = fixture("dnn");
    let mut args = vec![
        "select",
        "--system",
        path(&d.join("system.json")),
        "--application",
        path(&d.join("application.json")),
        "--power-limit",
        limit,
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    hetsim(&refs)
}

fn slaves(out: &Output) -> Vec<String> {
    assert_eq!(out.status.code(), Some(0), "{}", stderr(out));
    let cells: Value = serde_json::from_str(&stdout(out)).unwrap();
    cells
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["process"] == "slave")
        .map(|c| c["device"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn select_homogeneous_ladder() {
    let dir = TempDir::new().unwrap();
    let gpus: serde_json::Map<String, Value> =
        (0..2).flat_map(|h| (0..4).map(move |g| (format!("host{h}.gpu{g}"), json!(100)))).collect();
    let file = write_json(&dir, "power.json", &Value::Object(gpus));
    assert_eq!(slaves(&select("350", &["--device-power", &file])).len(), 3);
    assert_eq!(slaves(&select("800", &["--device-power", &file])).len(), 8);
    // pairs override the file
    let out = select("350", &["--device-power", &file, "--device-power", "host0.gpu0=400"]);
    assert!(!slaves(&out).contains(&"host0.gpu0".to_string()));
}

#[test]
fn select_follows_ratio_order() {
    let dir = TempDir::new().unwrap();
    let dev = |id: &str, perf: f64| json!({"id": id, "kind": "x", "performance": perf, "ncores": 1, "p_idle_w": 0, "p_peak_w": 0});
    let links: Vec<Value> = ["d1", "d2", "d3"]
        .iter()
        .map(|d| json!({"id": format!("l{d}"), "a": "cpu", "b": d, "t_startup_s": 0, "bandwidth_bps": 1}))
        .collect();
    let system = json!({
        "devices": [dev("cpu", 1.0), dev("d1", 10.0), dev("d2", 6.0), dev("d3", 5.0)],
        "links": links,
    });
    let app = json!({
        "processes": [
            {"name": "master", "behavior": "task_farm", "args": {"role": "master"}, "r_min": 1, "r_max": 1},
            {"name": "slave", "behavior": "task_farm", "args": {"role": "slave"}, "r_min": 1, "r_max": 3}
        ],
        "capabilities": [
            {"device": "cpu", "process": "master", "max": 1},
            {"device": "d1", "process": "slave", "max": 1},
            {"device": "d2", "process": "slave", "max": 1},
            {"device": "d3", "process": "slave", "max": 1}
        ]
    });
    let s = write_json(&dir, "system.json", &system);
    let a = write_json(&dir, "application.json", &app);
    let out = hetsim(&[
        "select", "--system", &s, "--application", &a, "--power-limit", "7",
        "--device-power", "d1=5", "--device-power", "d2=4", "--device-power", "d3=3", "--device-power", "cpu=0",
    ]);
    assert_eq!(slaves(&out), ["d1"]);
    let out = hetsim(&[
        "select", "--system", &s, "--application", &a, "--power-limit", "2",
        "--device-power", "d1=5", "--device-power", "d2=4", "--device-power", "d3=3",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors() {
    let out = hetsim(&["simulate", path(&fixture("tiny/instance.json")), "--idle-scope", "some"]);
    assert_eq!(out.status.code(), Some(2));
    let out = hetsim(&["simulate", path(&fixture("tiny/instance.json")), "--param", "novalue"]);
    assert_eq!(out.status.code(), Some(2));
    let out = hetsim(&["sweep", path(&fixture("dnn/suite.json")), "--trace", "/tmp/x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}
