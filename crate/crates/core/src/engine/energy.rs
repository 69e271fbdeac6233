use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::cost::power_at;
use crate::model::SystemModel;

/// A change of active core demand on a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    pub device: String,
    pub delta_demand: i64,
    pub label: String,
}

/// Demand changes in non-decreasing time order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTrace {
    pub records: Vec<TraceRecord>,
}

impl EventTrace {
    pub fn push(&mut self, time: f64, device: &str, delta_demand: i64, label: impl Into<String>) {
        self.records.push(TraceRecord { time, device: device.to_string(), delta_demand, label: label.into() });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `time_s,device,delta_demand,label`
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["time_s", "device", "delta_demand", "label"]).expect("in-memory write");
        for r in &self.records {
            w.write_record([r.time.to_string(), r.device.clone(), r.delta_demand.to_string(), r.label.clone()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

/// Constant total power over `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSegment {
    pub start: f64,
    pub end: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    /// Joules per device in scope.
    pub per_device_energy: BTreeMap<String, f64>,
    pub total_energy: f64,
    pub avg_power: f64,
    pub max_power: f64,
    /// Positive-length segments of the scope's total power.
    pub segments: Vec<PowerSegment>,
}

/// Piecewise-constant integration of device power over `[0, makespan]`.
///
/// Only devices in `scope` contribute. Records after `makespan` are ignored.
pub fn integrate_energy(
    trace: &EventTrace,
    system: &SystemModel,
    scope: &BTreeSet<String>,
    makespan: f64,
) -> Result<EnergyReport, SimError> {
    let mut devices = Vec::with_capacity(scope.len());
    for id in scope {
        let d = system.device(id).ok_or_else(|| SimError::Trace(format!("unknown device '{id}' in scope")))?;
        devices.push(d);
    }
    let slot: BTreeMap<&str, usize> = devices.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    let mut demand = vec![0i64; devices.len()];
    let mut power: Vec<f64> = devices.iter().map(|d| d.p_idle).collect();
    let mut energy = vec![0.0; devices.len()];
    let mut since = vec![0.0; devices.len()];
    let idle_total: f64 = power.iter().sum();

    let mut segments = Vec::new();
    let mut seg_start = 0.0;
    let mut last_time = 0.0;
    for r in &trace.records {
        if r.time < last_time {
            return Err(SimError::Trace(format!("time goes backwards at {} ({})", r.time, r.label)));
        }
        last_time = r.time;
        let Some(&i) = slot.get(r.device.as_str()) else {
            if system.device(&r.device).is_none() {
                return Err(SimError::Trace(format!("unknown device '{}'", r.device)));
            }
            continue;
        };
        let t = r.time.min(makespan);
        if t > seg_start {
            segments.push(PowerSegment { start: seg_start, end: t, power: power.iter().sum() });
            seg_start = t;
        }
        energy[i] += power[i] * (t - since[i]);
        since[i] = t;
        demand[i] += r.delta_demand;
        if demand[i] < 0 {
            return Err(SimError::Trace(format!(
                "negative demand on '{}' at {} ({})",
                r.device, r.time, r.label
            )));
        }
        power[i] = power_at(devices[i], demand[i] as u64);
    }
    if makespan > seg_start {
        segments.push(PowerSegment { start: seg_start, end: makespan, power: power.iter().sum() });
    }
    for i in 0..devices.len() {
        energy[i] += power[i] * (makespan - since[i]);
    }

    let total_energy: f64 = energy.iter().sum();
    let avg_power = if makespan > 0.0 { total_energy / makespan } else { idle_total };
    let max_power = if segments.is_empty() {
        idle_total
    } else {
        segments.iter().map(|s| s.power).fold(f64::NEG_INFINITY, f64::max)
    };
    Ok(EnergyReport {
        per_device_energy: devices.iter().map(|d| d.id.clone()).zip(energy).collect(),
        total_energy,
        avg_power,
        max_power,
        segments,
    })
}
