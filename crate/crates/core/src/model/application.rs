//! Applications: process implementations, instance requirements and
//! hardware capabilities.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};

use super::{ModelError, ParamVector};
use crate::cost::LinearComputeModel;

/// Upper bound on the number of instances of a process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Finite(u32),
    Unbounded,
}

impl Bound {
    pub fn admits(self, n: u64) -> bool {
        match self {
            Bound::Finite(max) => n <= u64::from(max),
            Bound::Unbounded => true,
        }
    }

    pub fn finite(self) -> Option<u32> {
        match self {
            Bound::Finite(v) => Some(v),
            Bound::Unbounded => None,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Finite(v) => write!(f, "{v}"),
            Bound::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            Bound::Finite(v) => s.serialize_u32(v),
            Bound::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct BoundVisitor;
        impl<'de> Visitor<'de> for BoundVisitor {
            type Value = Bound;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative integer, null or \"unbounded\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Bound, E> {
                u32::try_from(v).map(Bound::Finite).map_err(|_| E::custom("bound too large"))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Bound, E> {
                u64::try_from(v).map_err(|_| E::custom("bound must be >= 0")).and_then(|v| self.visit_u64(v))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Bound, E> {
                match v {
                    "unbounded" | "inf" | "infinity" => Ok(Bound::Unbounded),
                    other => Err(E::custom(format!("unknown bound '{other}'"))),
                }
            }
            fn visit_unit<E: de::Error>(self) -> Result<Bound, E> {
                Ok(Bound::Unbounded)
            }
        }
        d.deserialize_any(BoundVisitor)
    }
}

fn unbounded() -> Bound {
    Bound::Unbounded
}

/// One process implementation and its instance requirements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessImpl {
    pub name: String,
    pub behavior: String,
    #[serde(default)]
    pub args: Map<String, Value>,
    #[serde(default)]
    pub r_min: u32,
    #[serde(default = "unbounded")]
    pub r_max: Bound,
    /// Parameter that, when present in the execution parameters, pins the
    /// instance count of this process.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_param: Option<String>,
}

/// The application `A = <I, R_min, R_max>` with its calibrated cost models.
#[derive(Debug, Clone, PartialEq)]
pub struct Application {
    processes: Vec<ProcessImpl>,
    cost_models: BTreeMap<String, LinearComputeModel>,
}

/// `kappa(d, pi)`: how many instances of a process a device can run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Capabilities {
    table: BTreeMap<(String, String), u32>,
}

#[derive(Serialize, Deserialize)]
struct CapabilityEntry {
    device: String,
    process: String,
    max: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApplicationDocument {
    processes: Vec<ProcessImpl>,
    #[serde(default)]
    capabilities: Vec<CapabilityEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    cost_models: BTreeMap<String, LinearComputeModel>,
}

impl Application {
    pub fn new(processes: Vec<ProcessImpl>) -> Result<Self, ModelError> {
        let mut seen = std::collections::HashSet::new();
        for p in &processes {
            if p.name.is_empty() {
                return Err(ModelError::invalid("processes[].name", "empty process name"));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(ModelError::invalid(format!("process '{}': name", p.name), "duplicate process name"));
            }
            if !p.r_max.admits(u64::from(p.r_min)) {
                return Err(ModelError::invalid(
                    format!("process '{}': r_min", p.name),
                    format!("r_min {} exceeds r_max {}", p.r_min, p.r_max),
                ));
            }
        }
        Ok(Application { processes, cost_models: BTreeMap::new() })
    }

    pub fn with_cost_models(mut self, models: BTreeMap<String, LinearComputeModel>) -> Result<Self, ModelError> {
        for (key, m) in &models {
            let Some((process, kind)) = key.split_once('.') else {
                return Err(ModelError::invalid(format!("cost_models.{key}"), "key must be '<process>.<op-kind>'"));
            };
            if self.process(process).is_none() {
                return Err(ModelError::invalid(format!("cost_models.{key}"), format!("unknown process '{process}'")));
            }
            if kind.is_empty() {
                return Err(ModelError::invalid(format!("cost_models.{key}"), "empty operation kind"));
            }
            if !(m.phi.is_finite() && m.psi.is_finite()) {
                return Err(ModelError::invalid(format!("cost_models.{key}"), "phi and psi must be finite"));
            }
        }
        self.cost_models = models;
        Ok(self)
    }

    /// Parses the application document, returning the application and the
    /// capability table it carries.
    pub fn from_json(document: &str) -> Result<(Self, Capabilities), ModelError> {
        let doc: ApplicationDocument = serde_json::from_str(document)?;
        let app = Application::new(doc.processes)?.with_cost_models(doc.cost_models)?;
        let mut caps = Capabilities::default();
        for c in doc.capabilities {
            if app.process(&c.process).is_none() {
                return Err(ModelError::invalid(
                    format!("capabilities[{}/{}].process", c.device, c.process),
                    format!("unknown process '{}'", c.process),
                ));
            }
            caps.set(&c.device, &c.process, c.max);
        }
        Ok((app, caps))
    }

    pub fn to_json(&self, caps: &Capabilities) -> String {
        let doc = ApplicationDocument {
            processes: self.processes.clone(),
            capabilities: caps
                .iter()
                .map(|((d, p), max)| CapabilityEntry { device: d.clone(), process: p.clone(), max })
                .collect(),
            cost_models: self.cost_models.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("application document serializes")
    }

    pub fn processes(&self) -> &[ProcessImpl] {
        &self.processes
    }

    pub fn process(&self, name: &str) -> Option<&ProcessImpl> {
        self.processes.iter().find(|p| p.name == name)
    }

    pub fn cost_models(&self) -> &BTreeMap<String, LinearComputeModel> {
        &self.cost_models
    }

    /// Applies `count_param` bindings: every process whose count parameter is
    /// set in `params` gets `r_min = r_max = value`.
    pub fn bind_params(&self, params: &ParamVector) -> Result<Application, ModelError> {
        let mut bound = self.clone();
        for p in &mut bound.processes {
            let Some(name) = &p.count_param else { continue };
            let Some(value) = params.get(name) else { continue };
            let n = value
                .as_i64()
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| ModelError::invalid(format!("param {name}"), "instance count must be a non-negative integer"))?;
            if n < p.r_min || !p.r_max.admits(u64::from(n)) {
                return Err(ModelError::invalid(
                    format!("param {name}"),
                    format!("{n} instances of '{}' outside [{}, {}]", p.name, p.r_min, p.r_max),
                ));
            }
            p.r_min = n;
            p.r_max = Bound::Finite(n);
        }
        Ok(bound)
    }
}

impl Capabilities {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, device: &str, process: &str, max: u32) {
        self.table.insert((device.to_string(), process.to_string()), max);
    }

    pub fn with(mut self, device: &str, process: &str, max: u32) -> Self {
        self.set(device, process, max);
        self
    }

    pub fn get(&self, device: &str, process: &str) -> u32 {
        self.table.get(&(device.to_string(), process.to_string())).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), u32)> {
        self.table.iter().map(|(k, &v)| (k, v))
    }
}
