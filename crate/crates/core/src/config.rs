//! Loading simulation instances from JSON documents.
//!
//! An instance document names (or inlines) the system and application and
//! says how processes are mapped:
//!
//! ```json
//! {
//!   "system": "system.json",
//!   "application": {"processes": [...], "capabilities": [...]},
//!   "mapping": "round_robin",
//!   "params": {"nslaves": 4},
//!   "idle_scope": "allocated"
//! }
//! ```
//!
//! `mapping` is `"round_robin"` (the default), a list of
//! `{"device","process","count"}` cells, or a path to such a list. Relative
//! paths resolve against the directory of the referencing document.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::Value;
use thiserror::Error;

use crate::engine::{IdleScope, SimulationInstance};
use crate::model::{Application, Capabilities, Mapping, ModelError, ParamVector, SystemModel};
use crate::sched::{round_robin_map, SchedError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{context}: {source}")]
    Model { context: String, source: ModelError },
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error("{0}")]
    Invalid(String),
}

pub fn read_json(path: &Path) -> Result<Value, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
}

fn model<T>(context: &str, r: Result<T, ModelError>) -> Result<T, ConfigError> {
    r.map_err(|source| ConfigError::Model { context: context.to_string(), source })
}

/// A string value is a path relative to `base`; anything else is inline.
fn resolve(value: &Value, base: &Path, what: &str) -> Result<Value, ConfigError> {
    match value {
        Value::String(p) => read_json(&base.join(p)),
        Value::Object(_) | Value::Array(_) => Ok(value.clone()),
        other => Err(ConfigError::Invalid(format!("{what}: expected a path or an inline document, got {other}"))),
    }
}

pub fn load_system(path: &Path) -> Result<SystemModel, ConfigError> {
    let doc = read_json(path)?;
    model(&path.display().to_string(), SystemModel::from_json(&doc.to_string()))
}

pub fn load_application(path: &Path) -> Result<(Application, Capabilities), ConfigError> {
    let doc = read_json(path)?;
    model(&path.display().to_string(), Application::from_json(&doc.to_string()))
}

pub fn load_mapping(path: &Path) -> Result<Mapping, ConfigError> {
    let doc = read_json(path)?;
    model(&path.display().to_string(), Mapping::from_value(doc))
}

#[derive(Debug, Clone, PartialEq)]
pub enum MappingRule {
    RoundRobin,
    Fixed(Mapping),
}

/// A simulation instance whose mapping may still depend on its parameters.
#[derive(Debug, Clone)]
pub struct InstanceSpec {
    pub system: Arc<SystemModel>,
    pub app: Arc<Application>,
    pub caps: Arc<Capabilities>,
    pub mapping: MappingRule,
    pub params: ParamVector,
    pub idle_scope: Option<IdleScope>,
}

impl InstanceSpec {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let doc = read_json(path)?;
        Self::from_value(&doc, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_value(doc: &Value, base: &Path) -> Result<Self, ConfigError> {
        let obj = doc.as_object().ok_or_else(|| ConfigError::Invalid("instance: expected an object".into()))?;
        for key in obj.keys() {
            if !["system", "application", "mapping", "params", "idle_scope"].contains(&key.as_str()) {
                return Err(ConfigError::Invalid(format!("instance: unknown field '{key}'")));
            }
        }
        let field = |k: &str| obj.get(k).ok_or_else(|| ConfigError::Invalid(format!("instance: missing '{k}'")));

        let sys_doc = resolve(field("system")?, base, "system")?;
        let system = model("system", SystemModel::from_json(&sys_doc.to_string()))?;
        let app_doc = resolve(field("application")?, base, "application")?;
        let (app, caps) = model("application", Application::from_json(&app_doc.to_string()))?;

        let mapping = match obj.get("mapping") {
            None => MappingRule::RoundRobin,
            Some(Value::String(s)) if s == "round_robin" => MappingRule::RoundRobin,
            Some(v) => {
                let cells = resolve(v, base, "mapping")?;
                MappingRule::Fixed(model("mapping", Mapping::from_value(cells))?)
            }
        };
        let params: ParamVector = match obj.get("params") {
            None => ParamVector::new(),
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| ConfigError::Invalid(format!("params: {e}")))?,
        };
        let idle_scope = match obj.get("idle_scope") {
            None => None,
            Some(Value::String(s)) => Some(s.parse().map_err(ConfigError::Invalid)?),
            Some(other) => return Err(ConfigError::Invalid(format!("idle_scope: expected a string, got {other}"))),
        };
        Ok(InstanceSpec {
            system: Arc::new(system),
            app: Arc::new(app),
            caps: Arc::new(caps),
            mapping,
            params,
            idle_scope,
        })
    }

    /// The mapping for a given parameter vector; round-robin maps the
    /// application with its instance-count parameters bound.
    pub fn resolve_mapping(&self, params: &ParamVector) -> Result<Mapping, ConfigError> {
        match &self.mapping {
            MappingRule::Fixed(m) => Ok(m.clone()),
            MappingRule::RoundRobin => {
                let app = model("params", self.app.bind_params(params))?;
                Ok(round_robin_map(&self.system, &app, &self.caps)?)
            }
        }
    }

    pub fn with_mapping(&self, mapping: Mapping, params: ParamVector) -> SimulationInstance {
        SimulationInstance {
            system: self.system.clone(),
            app: self.app.clone(),
            caps: self.caps.clone(),
            mapping,
            params,
        }
    }

    pub fn instance(&self) -> Result<SimulationInstance, ConfigError> {
        let mapping = self.resolve_mapping(&self.params)?;
        Ok(self.with_mapping(mapping, self.params.clone()))
    }
}
