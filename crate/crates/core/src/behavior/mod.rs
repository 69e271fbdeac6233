//! Process behavior programs and the API they use to talk to the engine.
//!
//! A behavior is a deterministic state machine: the engine hands it the
//! outcome of its previous operation and receives the next operation, until
//! the behavior returns `None`. Blocking is implicit: an operation completes
//! when the engine says so, and any waiting is charged to it.

mod dnn;
mod farm;
mod script;

use std::collections::{BTreeMap, VecDeque};

use serde_json::{Map, Value};
use thiserror::Error;

use crate::cost::ComputeOpSpec;
use crate::model::{Address, Application, Device, ParamValue, ParamVector};

pub use farm::tags;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BehaviorError {
    #[error("unknown behavior '{0}'")]
    UnknownBehavior(String),
    #[error("{process}: unknown role '{role}' for behavior '{behavior}'")]
    UnknownRole { process: String, behavior: String, role: String },
    #[error("{process}: parameter '{name}': {reason}")]
    Param { process: String, name: String, reason: String },
    #[error("{process}: protocol error: {reason}")]
    Protocol { process: String, reason: String },
}

/// Where a receive accepts messages from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Instance(Address),
    /// Any instance of the named process.
    Process(String),
    Any,
}

impl Source {
    pub fn accepts(&self, sender: &Address) -> bool {
        match self {
            Source::Instance(a) => a == sender,
            Source::Process(p) => &sender.process == p,
            Source::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CommOp {
    Send { to: Address, tag: u32, size: f64, payload: u64 },
    /// `tag: None` accepts any tag. The transferred size is the sender's.
    Recv { from: Source, tag: Option<u32> },
}

/// One operation of a process.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Compute(ComputeOpSpec),
    /// A group of communications posted together; the operation ends when
    /// the last of them completes.
    Comm(Vec<CommOp>),
}

impl Op {
    pub fn compute(kind: &str, data_size: f64) -> Op {
        Op::Compute(ComputeOpSpec::new(kind, data_size))
    }

    pub fn send(to: Address, tag: u32, size: f64) -> Op {
        Op::Comm(vec![CommOp::Send { to, tag, size, payload: 0 }])
    }

    pub fn send_with(to: Address, tag: u32, size: f64, payload: u64) -> Op {
        Op::Comm(vec![CommOp::Send { to, tag, size, payload }])
    }

    pub fn recv(from: Source, tag: Option<u32>) -> Op {
        Op::Comm(vec![CommOp::Recv { from, tag }])
    }
}

/// A completed message transfer, seen from one endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub peer: Address,
    pub tag: u32,
    pub size: f64,
    pub payload: u64,
}

/// Result of the previous operation handed back to a behavior.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Start,
    Computed,
    /// One entry per part, in the order the parts were posted.
    Comm(Vec<Completion>),
}

impl Outcome {
    pub fn completions(&self) -> &[Completion] {
        match self {
            Outcome::Comm(c) => c,
            _ => &[],
        }
    }
}

pub trait Behavior: Send {
    fn next_op(&mut self, last: &Outcome) -> Result<Option<Op>, BehaviorError>;
}

/// What a behavior may know about itself and the rest of the application
/// when it is instantiated.
pub struct ProcessContext<'a> {
    pub address: &'a Address,
    pub device: &'a Device,
    pub behavior: &'a str,
    pub args: &'a Map<String, Value>,
    pub params: &'a ParamVector,
    /// Device id of every instance, per process.
    pub placement: &'a BTreeMap<String, Vec<String>>,
}

impl ProcessContext<'_> {
    pub fn instances(&self, process: &str) -> u32 {
        self.placement.get(process).map_or(0, |v| v.len() as u32)
    }

    pub fn peers(&self, process: &str) -> Vec<Address> {
        (0..self.instances(process)).map(|i| Address::new(process, i)).collect()
    }

    pub fn device_of(&self, addr: &Address) -> Option<&str> {
        self.placement.get(&addr.process)?.get(addr.index as usize).map(String::as_str)
    }

    /// Execution parameters override behavior arguments of the same name.
    fn lookup(&self, name: &str) -> Option<Value> {
        match self.params.get(name) {
            Some(ParamValue::Int(v)) => Some(Value::from(*v)),
            Some(ParamValue::Real(v)) => Some(Value::from(*v)),
            Some(ParamValue::Str(v)) => Some(Value::from(v.clone())),
            None => self.args.get(name).cloned(),
        }
    }

    pub fn param_error(&self, name: &str, reason: impl Into<String>) -> BehaviorError {
        BehaviorError::Param { process: self.address.to_string(), name: name.into(), reason: reason.into() }
    }

    pub fn protocol_error(&self, reason: impl Into<String>) -> BehaviorError {
        BehaviorError::Protocol { process: self.address.to_string(), reason: reason.into() }
    }

    pub fn f64_or(&self, name: &str, default: f64) -> Result<f64, BehaviorError> {
        match self.lookup(name) {
            None | Some(Value::Null) => Ok(default),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite() && *x >= 0.0)
                .ok_or_else(|| self.param_error(name, format!("expected a non-negative number, got {v}"))),
        }
    }

    pub fn f64_required(&self, name: &str) -> Result<f64, BehaviorError> {
        if self.lookup(name).is_none() {
            return Err(self.param_error(name, "missing"));
        }
        self.f64_or(name, 0.0)
    }

    pub fn u64_opt(&self, name: &str) -> Result<Option<u64>, BehaviorError> {
        match self.lookup(name) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => {
                let n = v.as_u64().or_else(|| v.as_f64().filter(|x| x.fract() == 0.0 && *x >= 0.0).map(|x| x as u64));
                n.map(Some).ok_or_else(|| self.param_error(name, format!("expected a non-negative integer, got {v}")))
            }
        }
    }

    pub fn u64_required(&self, name: &str) -> Result<u64, BehaviorError> {
        self.u64_opt(name)?.ok_or_else(|| self.param_error(name, "missing"))
    }

    pub fn bool_or(&self, name: &str, default: bool) -> Result<bool, BehaviorError> {
        match self.lookup(name) {
            None | Some(Value::Null) => Ok(default),
            Some(Value::Bool(b)) => Ok(b),
            Some(Value::Number(n)) => Ok(n.as_f64() != Some(0.0)),
            Some(v) => Err(self.param_error(name, format!("expected a boolean, got {v}"))),
        }
    }

    pub fn str_or(&self, name: &str, default: &str) -> Result<String, BehaviorError> {
        match self.lookup(name) {
            None | Some(Value::Null) => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s),
            Some(v) => Err(self.param_error(name, format!("expected a string, got {v}"))),
        }
    }

    pub fn raw(&self, name: &str) -> Option<Value> {
        self.lookup(name)
    }

    pub fn role(&self) -> Result<String, BehaviorError> {
        self.str_or("role", "")
    }
}

/// Builds the behavior of one process instance.
pub type Factory = fn(&ProcessContext<'_>) -> Result<Box<dyn Behavior>, BehaviorError>;

/// Compiled-in behavior programs, by name.
#[derive(Clone)]
pub struct BehaviorRegistry {
    entries: BTreeMap<String, Factory>,
}

impl Default for BehaviorRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl BehaviorRegistry {
    pub fn empty() -> Self {
        BehaviorRegistry { entries: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("op_list", script::op_list);
        r.register("task_farm", farm::task_farm);
        r.register("task_farm_prefetch", farm::task_farm_prefetch);
        r.register("vector_similarity", farm::vector_similarity);
        r.register("dnn_training", dnn::dnn_training);
        r
    }

    pub fn register(&mut self, name: &str, factory: Factory) {
        self.entries.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Every process of `app` names a registered behavior.
    pub fn check(&self, app: &Application) -> Result<(), BehaviorError> {
        match app.processes().iter().find(|p| !self.contains(&p.behavior)) {
            Some(p) => Err(BehaviorError::UnknownBehavior(p.behavior.clone())),
            None => Ok(()),
        }
    }

    pub fn instantiate(&self, ctx: &ProcessContext<'_>) -> Result<Box<dyn Behavior>, BehaviorError> {
        let factory = self
            .entries
            .get(ctx.behavior)
            .ok_or_else(|| BehaviorError::UnknownBehavior(ctx.behavior.to_string()))?;
        factory(ctx)
    }
}

/// A fixed operation sequence that ignores outcomes.
pub struct Script {
    ops: VecDeque<Op>,
}

impl Script {
    pub fn new(ops: impl IntoIterator<Item = Op>) -> Self {
        Script { ops: ops.into_iter().collect() }
    }
}

impl Behavior for Script {
    fn next_op(&mut self, _last: &Outcome) -> Result<Option<Op>, BehaviorError> {
        Ok(self.ops.pop_front())
    }
}

fn unknown_role(ctx: &ProcessContext<'_>, role: &str) -> BehaviorError {
    BehaviorError::UnknownRole {
        process: ctx.address.to_string(),
        behavior: ctx.behavior.to_string(),
        role: role.to_string(),
    }
}
