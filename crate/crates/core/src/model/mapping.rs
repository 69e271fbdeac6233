//! Process mappings and membership in the feasible set.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Application, Bound, Capabilities, ModelError, SystemModel};

/// `mu(d, pi)`: number of instances of each process placed on each device.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mapping {
    table: BTreeMap<(String, String), u32>,
}

#[derive(Serialize, Deserialize)]
struct MappingEntry {
    device: String,
    process: String,
    count: u32,
}

impl Mapping {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, device: &str, process: &str, count: u32) {
        let key = (device.to_string(), process.to_string());
        if count == 0 {
            self.table.remove(&key);
        } else {
            self.table.insert(key, count);
        }
    }

    pub fn with(mut self, device: &str, process: &str, count: u32) -> Self {
        self.set(device, process, count);
        self
    }

    pub fn get(&self, device: &str, process: &str) -> u32 {
        self.table.get(&(device.to_string(), process.to_string())).copied().unwrap_or(0)
    }

    /// Non-zero cells as ((device, process), count), ordered by device then process.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.table.iter().map(|((d, p), &c)| (d.as_str(), p.as_str(), c))
    }

    pub fn total(&self, process: &str) -> u64 {
        self.iter().filter(|&(_, p, _)| p == process).map(|(_, _, c)| u64::from(c)).sum()
    }

    pub fn is_allocated(&self, device: &str) -> bool {
        self.iter().any(|(d, _, _)| d == device)
    }

    /// `[{"device","process","count"}, ...]`
    pub fn to_json(&self) -> String {
        let entries: Vec<_> = self
            .iter()
            .map(|(d, p, c)| MappingEntry { device: d.into(), process: p.into(), count: c })
            .collect();
        serde_json::to_string_pretty(&entries).expect("mapping serializes")
    }

    pub fn from_json(document: &str) -> Result<Self, ModelError> {
        let entries: Vec<MappingEntry> = serde_json::from_str(document)?;
        Ok(Self::from_entries(entries))
    }

    pub(crate) fn from_value(value: serde_json::Value) -> Result<Self, ModelError> {
        let entries: Vec<MappingEntry> = serde_json::from_value(value)?;
        Ok(Self::from_entries(entries))
    }

    fn from_entries(entries: Vec<MappingEntry>) -> Self {
        let mut m = Mapping::new();
        for e in entries {
            let prev = m.get(&e.device, &e.process);
            m.set(&e.device, &e.process, prev + e.count);
        }
        m
    }

    /// Nested `{device: {process: count}}` form used in result records.
    pub fn to_nested(&self) -> BTreeMap<String, BTreeMap<String, u32>> {
        let mut out: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
        for (d, p, c) in self.iter() {
            out.entry(d.to_string()).or_default().insert(p.to_string(), c);
        }
        out
    }
}

/// A failed clause of the feasibility check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// `mu(d, pi) > kappa(d, pi)`
    Capability { device: String, process: String, count: u32, max: u32 },
    /// `sum_d mu(d, pi) < R_min`
    BelowMin { process: String, total: u64, min: u32 },
    /// `sum_d mu(d, pi) > R_max`
    AboveMax { process: String, total: u64, max: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Capability { device, process, count, max } => {
                write!(f, "capability: {count} instances of '{process}' on '{device}' exceed kappa={max}")
            }
            Violation::BelowMin { process, total, min } => {
                write!(f, "R_min: {total} instances of '{process}' below minimum {min}")
            }
            Violation::AboveMax { process, total, max } => {
                write!(f, "R_max: {total} instances of '{process}' above maximum {max}")
            }
        }
    }
}

/// Checks every id referenced by the capability table and mapping.
pub fn check_references(
    system: &SystemModel,
    app: &Application,
    caps: &Capabilities,
    mapping: &Mapping,
) -> Result<(), ModelError> {
    let cells = caps.iter().map(|((d, p), _)| (d.as_str(), p.as_str())).chain(mapping.iter().map(|(d, p, _)| (d, p)));
    for (d, p) in cells {
        if system.device(d).is_none() {
            return Err(ModelError::UnknownDevice(d.to_string()));
        }
        if app.process(p).is_none() {
            return Err(ModelError::UnknownProcess(p.to_string()));
        }
    }
    Ok(())
}

/// Lists every violated feasibility clause; an empty list means the mapping
/// is in the feasible set.
pub fn validate_mapping(
    system: &SystemModel,
    app: &Application,
    caps: &Capabilities,
    mapping: &Mapping,
) -> Result<Vec<Violation>, ModelError> {
    check_references(system, app, caps, mapping)?;
    let mut violations = Vec::new();
    for (d, p, count) in mapping.iter() {
        let max = caps.get(d, p);
        if count > max {
            violations.push(Violation::Capability { device: d.into(), process: p.into(), count, max });
        }
    }
    for p in app.processes() {
        let total = mapping.total(&p.name);
        if total < u64::from(p.r_min) {
            violations.push(Violation::BelowMin { process: p.name.clone(), total, min: p.r_min });
        }
        if let Bound::Finite(max) = p.r_max {
            if total > u64::from(max) {
                violations.push(Violation::AboveMax { process: p.name.clone(), total, max });
            }
        }
    }
    Ok(violations)
}
