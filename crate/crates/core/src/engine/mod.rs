//! Deterministic discrete-event simulation of a mapped application.
//!
//! Every mapped process instance runs its behavior program. Computations take
//! the time given by the cost registry; communications are rendezvous: a
//! transfer starts once both the send and the matching receive are posted and
//! takes the route's communication time. Waiting is charged to the waiting
//! operation. Events are ordered by (time, creation sequence).

mod energy;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::behavior::{Behavior, BehaviorError, BehaviorRegistry, CommOp, Completion, Op, Outcome, ProcessContext, Source};
use crate::cost::{CostError, CostRegistry};
use crate::model::{validate_mapping, Address, Application, Capabilities, Mapping, ModelError, ParamVector, SystemModel, Violation};

pub use energy::{integrate_energy, EnergyReport, EventTrace, PowerSegment, TraceRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("infeasible mapping: {}", join(.0))]
    InvalidMapping(Vec<Violation>),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("no route between devices '{from}' and '{to}'")]
    Unroutable { from: String, to: String },
    #[error("deadlock at t={time}: blocked {}", .blocked.join(", "))]
    Deadlock { time: f64, blocked: Vec<String> },
    #[error("event limit of {0} exceeded")]
    EventLimit(u64),
    #[error("malformed trace: {0}")]
    Trace(String),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Which devices contribute idle power to the average.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdleScope {
    /// Every device of the system.
    All,
    /// Devices hosting at least one process instance.
    #[default]
    Allocated,
}

impl std::str::FromStr for IdleScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(IdleScope::All),
            "allocated" => Ok(IdleScope::Allocated),
            _ => Err(format!("unknown idle scope '{s}' (expected all or allocated)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub idle_scope: IdleScope,
    pub record_trace: bool,
    pub record_ops: bool,
    pub max_events: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { idle_scope: IdleScope::Allocated, record_trace: false, record_ops: false, max_events: 100_000_000 }
    }
}

/// Everything a single simulation needs.
#[derive(Debug, Clone)]
pub struct SimulationInstance {
    pub system: Arc<SystemModel>,
    pub app: Arc<Application>,
    pub caps: Arc<Capabilities>,
    pub mapping: Mapping,
    pub params: ParamVector,
}

impl SimulationInstance {
    /// Runs with the built-in behaviors and the application's own cost models.
    pub fn run(&self, options: &SimOptions) -> Result<SimulationResult, SimError> {
        let costs = CostRegistry::from_models(self.app.cost_models());
        simulate(self, &BehaviorRegistry::builtin(), &costs, options)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessTime {
    pub instance: String,
    pub device: String,
    /// Sum of all operation durations.
    pub total_s: f64,
    pub compute_s: f64,
    /// Communication time including waiting.
    pub comm_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Compute,
    Comm,
}

/// One executed operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub instance: String,
    pub kind: OpKind,
    pub label: String,
    pub start: f64,
    pub end: f64,
}

impl OpRecord {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub makespan: f64,
    pub avg_power: f64,
    pub max_power: f64,
    /// Joules per device in the idle scope.
    pub per_device_energy: BTreeMap<String, f64>,
    pub total_energy: f64,
    /// Energy above idle caused by computations.
    pub extra_energy: f64,
    pub process_times: Vec<ProcessTime>,
    /// Devices counted in the power figures.
    pub scope: BTreeSet<String>,
    pub segments: Vec<PowerSegment>,
    pub trace: Option<EventTrace>,
    pub ops: Option<Vec<OpRecord>>,
}

impl SimulationResult {
    pub fn process_time(&self, instance: &str) -> Option<&ProcessTime> {
        self.process_times.iter().find(|p| p.instance == instance)
    }

    /// The JSON result record.
    pub fn to_record(&self, params: &ParamVector, mapping: &Mapping) -> Value {
        let times: BTreeMap<&str, f64> = self.process_times.iter().map(|p| (p.instance.as_str(), p.total_s)).collect();
        json!({
            "makespan_s": self.makespan,
            "avg_power_w": self.avg_power,
            "max_power_w": self.max_power,
            "per_device_energy_j": self.per_device_energy,
            "params": params,
            "mapping": mapping.to_nested(),
            "process_time_s": times,
        })
    }
}

/// Runs one simulation to completion.
pub fn simulate(
    instance: &SimulationInstance,
    behaviors: &BehaviorRegistry,
    costs: &CostRegistry,
    options: &SimOptions,
) -> Result<SimulationResult, SimError> {
    let system = &*instance.system;
    let app = instance.app.bind_params(&instance.params)?;
    let violations = validate_mapping(system, &app, &instance.caps, &instance.mapping)?;
    if !violations.is_empty() {
        return Err(SimError::InvalidMapping(violations));
    }
    behaviors.check(&app)?;

    // Instances numbered per process in application order, then device id order.
    let mut placement: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut slots = Vec::new();
    for p in app.processes() {
        let devices = placement.entry(p.name.clone()).or_default();
        for d in system.device_ids() {
            for _ in 0..instance.mapping.get(d, &p.name) {
                slots.push((p, Address::new(&p.name, devices.len() as u32), d.to_string()));
                devices.push(d.to_string());
            }
        }
    }
    let mut insts = Vec::with_capacity(slots.len());
    for (p, address, device_id) in slots {
        let device = system.device(&device_id).expect("validated mapping");
        let ctx = ProcessContext {
            address: &address,
            device,
            behavior: &p.behavior,
            args: &p.args,
            params: &instance.params,
            placement: &placement,
        };
        let behavior = behaviors.instantiate(&ctx)?;
        insts.push(Inst {
            device: system.device_position(&device_id).expect("validated mapping"),
            address,
            behavior,
            state: State::Ready,
            op_start: 0.0,
            label: String::new(),
            compute: 0.0,
            comm: 0.0,
        });
    }

    let scope: BTreeSet<String> = match options.idle_scope {
        IdleScope::All => system.device_ids().map(str::to_string).collect(),
        IdleScope::Allocated => {
            system.device_ids().filter(|d| instance.mapping.is_allocated(d)).map(str::to_string).collect()
        }
    };

    let mut sim = Sim {
        system,
        costs,
        options,
        index: insts.iter().enumerate().map(|(i, s)| (s.address.clone(), i)).collect(),
        insts,
        heap: BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        sends: Vec::new(),
        recvs: Vec::new(),
        routes: HashMap::new(),
        trace: EventTrace::default(),
        ops: Vec::new(),
        events: 0,
        dirty: false,
    };
    sim.sends.resize_with(sim.insts.len(), Vec::new);
    sim.run()?;

    let makespan = sim.insts.iter().map(|i| i.compute + i.comm).fold(0.0, f64::max);
    let report = integrate_energy(&sim.trace, system, &scope, makespan)?;
    let idle: f64 = scope.iter().map(|d| system.device(d).expect("scope device").p_idle).sum();
    let process_times = sim
        .insts
        .iter()
        .map(|i| ProcessTime {
            instance: i.address.to_string(),
            device: system.devices()[i.device].id.clone(),
            total_s: i.compute + i.comm,
            compute_s: i.compute,
            comm_s: i.comm,
        })
        .collect();
    Ok(SimulationResult {
        makespan,
        avg_power: report.avg_power,
        max_power: report.max_power,
        extra_energy: report.total_energy - idle * makespan,
        total_energy: report.total_energy,
        per_device_energy: report.per_device_energy,
        process_times,
        scope,
        segments: report.segments,
        trace: options.record_trace.then_some(sim.trace),
        ops: options.record_ops.then_some(sim.ops),
    })
}

enum State {
    Ready,
    Computing { demand: u32 },
    Comm { done: Vec<Option<Completion>>, remaining: usize },
    Done,
}

struct Inst {
    address: Address,
    device: usize,
    behavior: Box<dyn Behavior>,
    state: State,
    op_start: f64,
    label: String,
    compute: f64,
    comm: f64,
}

struct PendingSend {
    from: usize,
    part: usize,
    tag: u32,
    size: f64,
    payload: u64,
    posted: f64,
    seq: u64,
}

struct PendingRecv {
    inst: usize,
    part: usize,
    from: Source,
    tag: Option<u32>,
}

enum EventKind {
    ComputeDone(usize),
    Transfer { send: (usize, usize), recv: (usize, usize), tag: u32, size: f64, payload: u64 },
}

struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

struct Sim<'a> {
    system: &'a SystemModel,
    costs: &'a CostRegistry,
    options: &'a SimOptions,
    insts: Vec<Inst>,
    index: HashMap<Address, usize>,
    heap: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    /// Pending sends, by destination instance, in posting order.
    sends: Vec<Vec<PendingSend>>,
    /// Pending receives in posting order.
    recvs: Vec<PendingRecv>,
    routes: HashMap<(usize, usize), Vec<usize>>,
    trace: EventTrace,
    ops: Vec<OpRecord>,
    events: u64,
    dirty: bool,
}

impl Sim<'_> {
    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        let seq = self.next_seq();
        self.heap.push(Event { time, seq, kind });
    }

    fn run(&mut self) -> Result<(), SimError> {
        for i in 0..self.insts.len() {
            self.advance(i, Outcome::Start)?;
        }
        loop {
            if self.dirty {
                self.match_comm()?;
            }
            let Some(first) = self.heap.pop() else { break };
            self.now = first.time;
            let mut batch = vec![first];
            while self.heap.peek().is_some_and(|e| e.time == self.now) {
                batch.push(self.heap.pop().expect("peeked"));
            }
            for event in batch {
                self.events += 1;
                if self.events > self.options.max_events {
                    return Err(SimError::EventLimit(self.options.max_events));
                }
                self.handle(event)?;
            }
        }
        let blocked: Vec<String> = self
            .insts
            .iter()
            .filter(|i| !matches!(i.state, State::Done))
            .map(|i| format!("{} ({})", i.address, i.label))
            .collect();
        if blocked.is_empty() {
            Ok(())
        } else {
            Err(SimError::Deadlock { time: self.now, blocked })
        }
    }

    fn handle(&mut self, event: Event) -> Result<(), SimError> {
        match event.kind {
            EventKind::ComputeDone(i) => {
                let State::Computing { demand } = self.insts[i].state else {
                    unreachable!("compute completion for an instance that is not computing")
                };
                let device = &self.system.devices()[self.insts[i].device].id;
                self.trace.push(self.now, device, -i64::from(demand), self.insts[i].label.clone());
                self.finish_op(i, true);
                self.advance(i, Outcome::Computed)
            }
            EventKind::Transfer { send, recv, tag, size, payload } => {
                let to_sender = Completion { peer: self.insts[recv.0].address.clone(), tag, size, payload };
                let to_receiver = Completion { peer: self.insts[send.0].address.clone(), tag, size, payload };
                self.complete_part(send, to_sender)?;
                self.complete_part(recv, to_receiver)
            }
        }
    }

    fn complete_part(&mut self, (i, part): (usize, usize), c: Completion) -> Result<(), SimError> {
        let State::Comm { done, remaining, .. } = &mut self.insts[i].state else {
            unreachable!("transfer completion for an instance that is not communicating")
        };
        done[part] = Some(c);
        *remaining -= 1;
        if *remaining > 0 {
            return Ok(());
        }
        let State::Comm { done, .. } = std::mem::replace(&mut self.insts[i].state, State::Ready) else {
            unreachable!()
        };
        self.finish_op(i, false);
        let outcome = Outcome::Comm(done.into_iter().map(|c| c.expect("all parts done")).collect());
        self.advance(i, outcome)
    }

    fn finish_op(&mut self, i: usize, compute: bool) {
        let inst = &mut self.insts[i];
        let d = self.now - inst.op_start;
        if compute {
            inst.compute += d;
        } else {
            inst.comm += d;
        }
        inst.state = State::Ready;
        if self.options.record_ops {
            self.ops.push(OpRecord {
                instance: inst.address.to_string(),
                kind: if compute { OpKind::Compute } else { OpKind::Comm },
                label: inst.label.clone(),
                start: inst.op_start,
                end: self.now,
            });
        }
    }

    /// Feeds `outcome` to the behavior and starts its next operation.
    fn advance(&mut self, i: usize, mut outcome: Outcome) -> Result<(), SimError> {
        loop {
            let op = self.insts[i].behavior.next_op(&outcome)?;
            let now = self.now;
            let inst = &mut self.insts[i];
            inst.op_start = now;
            match op {
                None => {
                    inst.state = State::Done;
                    inst.label = "finished".into();
                    return Ok(());
                }
                Some(Op::Compute(spec)) => {
                    if spec.core_demand == 0 {
                        return Err(SimError::Cost(CostError::Domain(format!(
                            "{}: computation '{}' with zero core demand",
                            inst.address, spec.kind
                        ))));
                    }
                    let device = &self.system.devices()[inst.device];
                    let t = self.costs.compute_time(&inst.address.process, &spec, device)?;
                    inst.label = format!("{} {}", inst.address, spec.kind);
                    inst.state = State::Computing { demand: spec.core_demand };
                    self.trace.push(now, &device.id, i64::from(spec.core_demand), inst.label.clone());
                    self.schedule(now + t, EventKind::ComputeDone(i));
                    return Ok(());
                }
                Some(Op::Comm(parts)) if parts.is_empty() => {
                    inst.label = "empty comm".into();
                    self.finish_op(i, false);
                    outcome = Outcome::Comm(Vec::new());
                }
                Some(Op::Comm(parts)) => {
                    inst.label = describe(&inst.address, &parts);
                    for (part, p) in parts.iter().enumerate() {
                        match p {
                            CommOp::Send { to, tag, size, payload } => {
                                let &dest = self.index.get(to).ok_or_else(|| BehaviorError::Protocol {
                                    process: self.insts[i].address.to_string(),
                                    reason: format!("send to unknown instance {to}"),
                                })?;
                                if !(*size >= 0.0 && size.is_finite()) {
                                    return Err(SimError::Cost(CostError::Domain(format!(
                                        "{}: message size {size}",
                                        self.insts[i].address
                                    ))));
                                }
                                let seq = self.next_seq();
                                self.sends[dest].push(PendingSend {
                                    from: i,
                                    part,
                                    tag: *tag,
                                    size: *size,
                                    payload: *payload,
                                    posted: now,
                                    seq,
                                });
                            }
                            CommOp::Recv { from, tag } => {
                                self.recvs.push(PendingRecv { inst: i, part, from: from.clone(), tag: *tag });
                            }
                        }
                    }
                    let n = parts.len();
                    self.insts[i].state = State::Comm { done: vec![None; n], remaining: n };
                    self.dirty = true;
                    return Ok(());
                }
            }
        }
    }

    /// Pairs every pending receive, in posting order, with the earliest
    /// posted acceptable send (ties: sender instance order, then posting
    /// sequence) and schedules the transfers.
    fn match_comm(&mut self) -> Result<(), SimError> {
        self.dirty = false;
        let recvs = std::mem::take(&mut self.recvs);
        let mut unmatched = Vec::new();
        for r in recvs {
            let candidates = &self.sends[r.inst];
            let best = candidates
                .iter()
                .enumerate()
                .filter(|(_, s)| r.from.accepts(&self.insts[s.from].address) && r.tag.is_none_or(|t| t == s.tag))
                .min_by(|(_, a), (_, b)| {
                    a.posted.total_cmp(&b.posted).then(a.from.cmp(&b.from)).then(a.seq.cmp(&b.seq))
                })
                .map(|(k, _)| k);
            let Some(k) = best else {
                unmatched.push(r);
                continue;
            };
            let s = self.sends[r.inst].remove(k);
            let t = self.transfer_time(s.from, r.inst, s.size)?;
            self.schedule(
                self.now + t,
                EventKind::Transfer {
                    send: (s.from, s.part),
                    recv: (r.inst, r.part),
                    tag: s.tag,
                    size: s.size,
                    payload: s.payload,
                },
            );
        }
        self.recvs = unmatched;
        Ok(())
    }

    fn transfer_time(&mut self, from: usize, to: usize, size: f64) -> Result<f64, SimError> {
        let (a, b) = (self.insts[from].device, self.insts[to].device);
        if !self.routes.contains_key(&(a, b)) {
            let path = self.system.route_indices(a, b).ok_or_else(|| SimError::Unroutable {
                from: self.system.devices()[a].id.clone(),
                to: self.system.devices()[b].id.clone(),
            })?;
            self.routes.insert((a, b), path);
        }
        let links = self.system.links();
        let route: Vec<_> = self.routes[&(a, b)].iter().map(|&l| &links[l]).collect();
        Ok(self.costs.comm_time(size, &route))
    }
}

fn describe(me: &Address, parts: &[CommOp]) -> String {
    let list: Vec<String> = parts
        .iter()
        .map(|p| match p {
            CommOp::Send { to, tag, .. } => format!("send to {to} tag {tag}"),
            CommOp::Recv { from, tag } => {
                let from = match from {
                    Source::Instance(a) => a.to_string(),
                    Source::Process(p) => format!("any {p}"),
                    Source::Any => "any".into(),
                };
                match tag {
                    Some(t) => format!("recv from {from} tag {t}"),
                    None => format!("recv from {from}"),
                }
            }
        })
        .collect();
    format!("{me} {}", list.join(", "))
}

#[cfg(test)]
mod tests;
