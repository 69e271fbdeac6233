//! Optimizer suites: expansion over parameter and mapping spaces, parallel
//! execution and Pareto analysis of (makespan, average power).
//!
//! ```json
//! {
//!   "base": { ...instance document... },
//!   "sweep": {"nslaves": {"from": 1, "to": 8, "step": 1}, "mode": {"values": ["a", "b"]}},
//!   "mappings": "fixed"
//! }
//! ```
//!
//! `mappings` is `"fixed"` (the base mapping rule), `{"enumerate": N}` (the
//! first N feasible mappings) or `{"power_limit": W, "slave": "slave",
//! "device_power": {...}}` where `W` is one limit or a list of limits.

mod pareto;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde_json::Value;

use crate::config::{read_json, ConfigError, InstanceSpec};
use crate::engine::{SimOptions, SimulationInstance, SimulationResult};
use crate::model::{Mapping, ParamSpace, ParamVector};
use crate::sched::{device_power, enumerate_mappings, select_and_map_under_limit};

pub use pareto::{dominates, pareto_front, pareto_mask, pareto_set, ParetoError, ParetoPoint};

#[derive(Debug, Clone, PartialEq)]
pub enum MappingSource {
    Fixed,
    Enumerate(usize),
    PowerLimit { limits: Vec<f64>, slave: String, device_power: BTreeMap<String, f64> },
}

#[derive(Debug, Clone)]
pub struct Suite {
    pub base: InstanceSpec,
    pub space: ParamSpace,
    pub mappings: MappingSource,
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl Suite {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let doc = read_json(path)?;
        Self::from_value(&doc, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_value(doc: &Value, base_dir: &Path) -> Result<Self, ConfigError> {
        let obj = doc.as_object().ok_or_else(|| invalid("suite: expected an object"))?;
        for key in obj.keys() {
            if !["base", "sweep", "mappings"].contains(&key.as_str()) {
                return Err(invalid(format!("suite: unknown field '{key}'")));
            }
        }
        let base = match obj.get("base") {
            Some(Value::String(p)) => InstanceSpec::load(&base_dir.join(p))?,
            Some(v) => InstanceSpec::from_value(v, base_dir)?,
            None => return Err(invalid("suite: missing 'base'")),
        };
        let space: ParamSpace = match obj.get("sweep") {
            None => ParamSpace::default(),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| invalid(format!("sweep: {e}")))?,
        };
        let mappings = match obj.get("mappings") {
            None => MappingSource::Fixed,
            Some(Value::String(s)) if s == "fixed" => MappingSource::Fixed,
            Some(Value::Object(m)) if m.contains_key("enumerate") => {
                let n = m["enumerate"].as_u64().filter(|n| *n >= 1).ok_or_else(|| invalid("mappings.enumerate: expected an integer >= 1"))?;
                MappingSource::Enumerate(n as usize)
            }
            Some(Value::Object(m)) if m.contains_key("power_limit") => {
                let limits = match &m["power_limit"] {
                    Value::Array(a) => a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>(),
                    v => v.as_f64().map(|x| vec![x]),
                }
                .filter(|l| !l.is_empty() && l.iter().all(|x| *x >= 0.0))
                .ok_or_else(|| invalid("mappings.power_limit: expected watts or a list of watts"))?;
                let slave = m.get("slave").and_then(Value::as_str).unwrap_or("slave").to_string();
                let device_power = match m.get("device_power") {
                    None => BTreeMap::new(),
                    Some(v) => serde_json::from_value(v.clone()).map_err(|e| invalid(format!("mappings.device_power: {e}")))?,
                };
                MappingSource::PowerLimit { limits, slave, device_power }
            }
            Some(other) => return Err(invalid(format!("mappings: unsupported value {other}"))),
        };
        Ok(Suite { base, space, mappings })
    }
}

/// One point of an expanded suite. Mapping failures stay attached to their
/// point so the rest of the suite can still run.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub params: ParamVector,
    pub mapping_id: String,
    pub instance: Result<SimulationInstance, String>,
}

/// Parameter vectors in lexicographic order (last name fastest), and for
/// each the mappings of the mapping source.
pub fn expand_suite(suite: &Suite) -> Result<Vec<SuiteEntry>, ConfigError> {
    let vectors = suite
        .space
        .expand(&suite.base.params)
        .map_err(|source| ConfigError::Model { context: "sweep".into(), source })?;
    let base = &suite.base;
    let mut out = Vec::new();
    for params in vectors {
        let entry = |mapping_id: String, mapping: Result<Mapping, String>| SuiteEntry {
            params: params.clone(),
            mapping_id,
            instance: mapping.map(|m| base.with_mapping(m, params.clone())),
        };
        match &suite.mappings {
            MappingSource::Fixed => {
                out.push(entry("fixed".into(), base.resolve_mapping(&params).map_err(|e| e.to_string())));
            }
            MappingSource::Enumerate(bound) => match base.app.bind_params(&params) {
                Ok(app) => {
                    for (i, m) in enumerate_mappings(&base.system, &app, &base.caps, *bound).into_iter().enumerate() {
                        out.push(entry(format!("m{i}"), Ok(m)));
                    }
                }
                Err(e) => out.push(entry("enumerate".into(), Err(e.to_string()))),
            },
            MappingSource::PowerLimit { limits, slave, device_power: overrides } => {
                let power = device_power(&base.system, overrides)?;
                for &limit in limits {
                    let mapping = base
                        .app
                        .bind_params(&params)
                        .map_err(|e| e.to_string())
                        .and_then(|app| {
                            select_and_map_under_limit(&base.system, &app, &base.caps, &power, limit, slave)
                                .map_err(|e| e.to_string())
                        });
                    out.push(entry(format!("limit={limit}"), mapping));
                }
            }
        }
    }
    Ok(out)
}

/// Simulates every entry on `workers` threads. The output is in input order
/// and independent of the worker count.
pub fn run_suite(
    entries: &[SuiteEntry],
    options: &SimOptions,
    workers: usize,
) -> Result<Vec<Result<SimulationResult, String>>, ConfigError> {
    if workers == 0 {
        return Err(invalid("workers must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("cannot start workers: {e}")))?;
    Ok(pool.install(|| {
        entries
            .par_iter()
            .map(|e| match &e.instance {
                Ok(inst) => inst.run(options).map_err(|err| err.to_string()),
                Err(msg) => Err(msg.clone()),
            })
            .collect()
    }))
}

/// Pareto status of each result under (makespan, avg power); failed runs
/// are never optimal.
pub fn pareto_flags(results: &[Result<SimulationResult, String>]) -> Vec<bool> {
    let ok: Vec<(usize, [f64; 2])> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().ok().map(|r| (i, [r.makespan, r.avg_power])))
        .collect();
    let objs: Vec<&[f64]> = ok.iter().map(|(_, o)| o.as_slice()).collect();
    let mask = pareto_mask(&objs).unwrap_or_else(|_| vec![false; objs.len()]);
    let mut flags = vec![false; results.len()];
    for ((i, _), keep) in ok.iter().zip(mask) {
        flags[*i] = keep;
    }
    flags
}

/// `makespan_s,avg_power_w,pareto,<params...>,mapping_id`; failed runs
/// have empty objectives.
pub fn results_csv(entries: &[SuiteEntry], results: &[Result<SimulationResult, String>]) -> String {
    let names: BTreeSet<&str> = entries.iter().flat_map(|e| e.params.iter().map(|(k, _)| k.as_str())).collect();
    let flags = pareto_flags(results);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["makespan_s", "avg_power_w", "pareto"];
    header.extend(names.iter().copied());
    header.push("mapping_id");
    w.write_record(&header).expect("in-memory write");
    for ((e, r), flag) in entries.iter().zip(results).zip(flags) {
        let mut row = match r {
            Ok(r) => vec![r.makespan.to_string(), r.avg_power.to_string()],
            Err(_) => vec![String::new(), String::new()],
        };
        row.push(flag.to_string());
        for n in &names {
            row.push(e.params.get(n).map(ToString::to_string).unwrap_or_default());
        }
        row.push(e.mapping_id.clone());
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
