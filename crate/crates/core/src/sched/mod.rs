//! Mapping heuristics: round-robin placement, greedy power-capped device
//! selection and bounded enumeration of feasible mappings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_mapping, Application, Bound, Capabilities, Mapping, ModelError, SystemModel, Violation};

#[derive(Debug, Error)]
pub enum SchedError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("infeasible for process '{process}': {reason}")]
    Infeasible { process: String, reason: String },
    #[error("mapper produced an invalid mapping: {0:?}")]
    Invalid(Vec<Violation>),
}

fn infeasible(process: &str, reason: impl Into<String>) -> SchedError {
    SchedError::Infeasible { process: process.to_string(), reason: reason.into() }
}

fn checked(system: &SystemModel, app: &Application, caps: &Capabilities, m: Mapping) -> Result<Mapping, SchedError> {
    let v = validate_mapping(system, app, caps, &m)?;
    if v.is_empty() {
        Ok(m)
    } else {
        Err(SchedError::Invalid(v))
    }
}

/// Devices able to host `process`, in id order, with their capacity.
fn capable<'s>(system: &'s SystemModel, caps: &Capabilities, process: &str) -> Vec<(&'s str, u32)> {
    system.device_ids().map(|d| (d, caps.get(d, process))).filter(|(_, k)| *k > 0).collect()
}

/// Places `target` instances by cycling over `devices`, one per visit, while
/// capacity remains. Returns how many were placed.
fn cycle_place(mapping: &mut Mapping, process: &str, devices: &[(&str, u32)], target: u64) -> u64 {
    let mut placed = 0;
    let mut progress = true;
    while placed < target && progress {
        progress = false;
        for &(d, cap) in devices {
            if placed == target {
                break;
            }
            let n = mapping.get(d, process);
            if n < cap {
                mapping.set(d, process, n + 1);
                placed += 1;
                progress = true;
            }
        }
    }
    placed
}

/// Cycles each process over its capable devices in id order until `r_min`
/// is met, then keeps going toward `r_max` while capacity remains.
pub fn round_robin_map(system: &SystemModel, app: &Application, caps: &Capabilities) -> Result<Mapping, SchedError> {
    let mut mapping = Mapping::new();
    for p in app.processes() {
        let devices = capable(system, caps, &p.name);
        let capacity: u64 = devices.iter().map(|(_, k)| u64::from(*k)).sum();
        if capacity < u64::from(p.r_min) {
            return Err(infeasible(&p.name, format!("needs {} instances, capabilities allow {capacity}", p.r_min)));
        }
        let target = match p.r_max {
            Bound::Finite(max) => capacity.min(u64::from(max)),
            Bound::Unbounded => capacity,
        };
        cycle_place(&mut mapping, &p.name, &devices, target);
    }
    checked(system, app, caps, mapping)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnapsackItem {
    pub device: String,
    /// Performance units.
    pub value: f64,
    /// Watts.
    pub weight: f64,
}

impl KnapsackItem {
    pub fn new(device: impl Into<String>, value: f64, weight: f64) -> Self {
        KnapsackItem { device: device.into(), value, weight }
    }

    fn ratio(&self) -> f64 {
        if self.weight == 0.0 {
            f64::INFINITY
        } else {
            self.value / self.weight
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Selection {
    /// Selected devices in the order they were taken.
    pub devices: Vec<String>,
    pub value: f64,
    pub weight: f64,
}

/// Greedy 0/1 knapsack: items by value/weight descending (zero weight
/// first, ties by device id), each taken iff it still fits.
///
/// If a single fitting item is worth more than the whole greedy pick, that
/// item alone is returned instead, which bounds the loss at half the optimum.
pub fn greedy_power_knapsack(items: &[KnapsackItem], capacity: f64) -> Selection {
    let mut order: Vec<&KnapsackItem> = items.iter().collect();
    order.sort_by(|a, b| b.ratio().total_cmp(&a.ratio()).then_with(|| a.device.cmp(&b.device)));
    let mut sel = Selection::default();
    for item in &order {
        if sel.weight + item.weight <= capacity {
            sel.weight += item.weight;
            sel.value += item.value;
            sel.devices.push(item.device.clone());
        }
    }
    let best_single = order
        .iter()
        .filter(|i| i.weight <= capacity)
        .max_by(|a, b| a.value.total_cmp(&b.value).then_with(|| b.device.cmp(&a.device)));
    match best_single {
        Some(i) if i.value > sel.value => {
            Selection { devices: vec![i.device.clone()], value: i.value, weight: i.weight }
        }
        _ => sel,
    }
}

/// Maximum power draw per device: `p_peak_w`, overridden by `overrides`.
pub fn device_power(system: &SystemModel, overrides: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>, SchedError> {
    for id in overrides.keys() {
        if system.device(id).is_none() {
            return Err(ModelError::UnknownDevice(id.clone()).into());
        }
    }
    Ok(system
        .devices()
        .iter()
        .map(|d| (d.id.clone(), overrides.get(&d.id).copied().unwrap_or(d.p_peak)))
        .collect())
}

/// Picks devices for `slave` under a power limit and maps one slave instance
/// on each.
///
/// Every other process first gets its `r_min` instances round-robin; the
/// devices they occupy are charged against `limit` once. The remaining budget
/// goes to a greedy knapsack over slave-capable devices (value =
/// performance, weight = `device_power`, zero for devices already charged).
pub fn select_and_map_under_limit(
    system: &SystemModel,
    app: &Application,
    caps: &Capabilities,
    device_power: &BTreeMap<String, f64>,
    limit: f64,
    slave: &str,
) -> Result<Mapping, SchedError> {
    let slave_proc = app.process(slave).ok_or_else(|| ModelError::UnknownProcess(slave.to_string()))?;
    let weight = |d: &str| device_power.get(d).copied().unwrap_or_else(|| system.device(d).map_or(0.0, |d| d.p_peak));

    let mut mapping = Mapping::new();
    for p in app.processes().iter().filter(|p| p.name != slave) {
        let devices = capable(system, caps, &p.name);
        if cycle_place(&mut mapping, &p.name, &devices, u64::from(p.r_min)) < u64::from(p.r_min) {
            return Err(infeasible(&p.name, format!("capabilities allow fewer than {} instances", p.r_min)));
        }
    }
    let charged: f64 = system.device_ids().filter(|d| mapping.is_allocated(d)).map(weight).sum();
    if charged > limit {
        return Err(infeasible(slave, format!("required processes alone draw {charged} W, over the {limit} W limit")));
    }

    let items: Vec<KnapsackItem> = capable(system, caps, slave)
        .into_iter()
        .map(|(d, _)| {
            let w = if mapping.is_allocated(d) { 0.0 } else { weight(d) };
            KnapsackItem::new(d, system.device(d).expect("known device").performance, w)
        })
        .collect();
    let sel = greedy_power_knapsack(&items, limit - charged);
    let max = slave_proc.r_max.finite().map_or(usize::MAX, |m| m as usize);
    for d in sel.devices.iter().take(max) {
        mapping.set(d, slave, 1);
    }
    let placed = sel.devices.len().min(max);
    if placed < slave_proc.r_min as usize {
        return Err(infeasible(
            slave,
            format!("only {placed} devices fit in the {limit} W limit, {} required", slave_proc.r_min),
        ));
    }
    checked(system, app, caps, mapping)
}

/// Feasible count vectors of one process over its capable devices, in
/// odometer order (first device varies fastest), at most `bound` of them.
fn process_vectors(devices: &[(&str, u32)], r_min: u64, r_max: Option<u64>, bound: usize) -> Vec<Vec<u32>> {
    #[allow(clippy::too_many_arguments)]
    fn walk(
        pos: usize,
        devices: &[(&str, u32)],
        digits: &mut Vec<u32>,
        sum: u64,
        lo: u64,
        hi: u64,
        bound: usize,
        out: &mut Vec<Vec<u32>>,
    ) {
        // digits are filled from the most significant (last) device down
        if out.len() >= bound {
            return;
        }
        let rest_max: u64 = devices[..pos].iter().map(|(_, k)| u64::from(*k)).sum();
        if sum > hi || sum + rest_max < lo {
            return;
        }
        if pos == 0 {
            out.push(digits.clone());
            return;
        }
        let i = pos - 1;
        for v in 0..=devices[i].1 {
            digits[i] = v;
            walk(i, devices, digits, sum + u64::from(v), lo, hi, bound, out);
        }
        digits[i] = 0;
    }
    let mut out = Vec::new();
    let mut digits = vec![0; devices.len()];
    walk(devices.len(), devices, &mut digits, 0, r_min, r_max.unwrap_or(u64::MAX), bound, &mut out);
    out
}

/// A process, its capable devices with their caps, and its count vectors.
type ProcessSpace<'a> = (&'a str, Vec<(&'a str, u32)>, Vec<Vec<u32>>);

/// Feasible mappings in odometer order over the `(process, device)` cells
/// (application order, then device id order; the first cell varies
/// fastest), truncated after `bound`.
pub fn enumerate_mappings(system: &SystemModel, app: &Application, caps: &Capabilities, bound: usize) -> Vec<Mapping> {
    if bound == 0 {
        return Vec::new();
    }
    let per_process: Vec<ProcessSpace<'_>> = app
        .processes()
        .iter()
        .map(|p| {
            let devices = capable(system, caps, &p.name);
            let r_max = p.r_max.finite().map(u64::from);
            let vectors = process_vectors(&devices, u64::from(p.r_min), r_max, bound);
            (p.name.as_str(), devices, vectors)
        })
        .collect();
    if per_process.iter().any(|(_, _, v)| v.is_empty()) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; per_process.len()];
    'outer: while out.len() < bound {
        let mut m = Mapping::new();
        for ((name, devices, vectors), &i) in per_process.iter().zip(&idx) {
            for ((d, _), &n) in devices.iter().zip(&vectors[i]) {
                m.set(d, name, n);
            }
        }
        out.push(m);
        for (k, (_, _, vectors)) in per_process.iter().enumerate() {
            idx[k] += 1;
            if idx[k] < vectors.len() {
                continue 'outer;
            }
            idx[k] = 0;
        }
        break;
    }
    out
}
