//! Master/slave task farming with greedy dynamic dispatch.
//!
//! The master hands one package to every slave, then gives the next package
//! to whichever slave returns a result first. Roles (`args.role`):
//!
//! * `master`, `slave`: the farm itself.
//! * `store`: remote data source. When `remote_fetch_size_b > 0` every
//!   package needs that many bytes from the store before it can be computed.
//! * `fetcher` (prefetch variant only): co-located helper of the slave with
//!   the same rank that pulls the next package's data while the slave
//!   computes the current one.
//!
//! Peer process names default to the role names and can be overridden with
//! the `master`, `slave`, `store` and `fetcher` args.

use super::{unknown_role, Behavior, BehaviorError, CommOp, Completion, Op, Outcome, ProcessContext, Source};
use crate::cost::ComputeOpSpec;
use crate::model::Address;

/// Message tags used by the farm protocols.
pub mod tags {
    pub const WORK: u32 = 1;
    pub const RESULT: u32 = 2;
    pub const STOP: u32 = 3;
    pub const REQUEST: u32 = 4;
    pub const DATA: u32 = 5;
    pub const PREFETCH: u32 = 6;
    pub const MODEL: u32 = 7;
    pub const MODEL_BACK: u32 = 8;
}
use tags::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Package {
    /// Bytes the master sends to hand out the package.
    pub send: f64,
    /// Compute op data size.
    pub work: f64,
    /// Bytes of the returned result.
    pub result: f64,
}

#[derive(Debug, Clone)]
struct FarmSpec {
    packages: Vec<Package>,
    kind: String,
    master: String,
    slave: String,
    store: String,
    fetcher: String,
    fetch_size: f64,
}

impl FarmSpec {
    fn common(ctx: &ProcessContext<'_>, packages: Vec<Package>) -> Result<Self, BehaviorError> {
        Ok(FarmSpec {
            packages,
            kind: ctx.str_or("op_kind", "package")?,
            master: ctx.str_or("master", "master")?,
            slave: ctx.str_or("slave", "slave")?,
            store: ctx.str_or("store", "store")?,
            fetcher: ctx.str_or("fetcher", "fetcher")?,
            fetch_size: ctx.f64_or("remote_fetch_size_b", 0.0)?,
        })
    }

    fn uses_store(&self) -> bool {
        self.fetch_size > 0.0
    }

    fn compute(&self, pkg: u64) -> Op {
        Op::Compute(ComputeOpSpec::new(self.kind.clone(), self.packages[pkg as usize].work))
    }
}

/// `n * v_dpm` equal packages of `total_work`.
pub(crate) fn task_farm_packages(ctx: &ProcessContext<'_>, slave: &str) -> Result<Vec<Package>, BehaviorError> {
    let total_work = ctx.f64_required("total_work")?;
    let v_dpm = ctx.u64_required("v_dpm")?;
    if v_dpm == 0 {
        return Err(ctx.param_error("v_dpm", "data package multiplier must be >= 1"));
    }
    let n = u64::from(ctx.instances(slave));
    if n == 0 {
        return Err(ctx.param_error("slave", format!("no instances of '{slave}' are mapped")));
    }
    let count = n * v_dpm;
    let pkg = Package {
        send: ctx.f64_or("package_size_b", 0.0)?,
        work: total_work / count as f64,
        result: ctx.f64_or("result_size_b", 0.0)?,
    };
    Ok(vec![pkg; count as usize])
}

/// Chunks of `chunk_points` points (the last may be short).
pub(crate) fn similarity_packages(ctx: &ProcessContext<'_>) -> Result<Vec<Package>, BehaviorError> {
    let points = ctx.u64_required("points")?;
    let dims = ctx.u64_required("dims")? as f64;
    let chunk = ctx.u64_required("chunk_points")?;
    if chunk == 0 {
        return Err(ctx.param_error("chunk_points", "must be >= 1"));
    }
    if chunk > points {
        return Err(ctx.param_error("chunk_points", format!("{chunk} exceeds the {points} points")));
    }
    let element = ctx.f64_or("element_size_b", 8.0)?;
    let work_per_element = ctx.f64_or("work_per_element", 1.0)?;
    let mut out = Vec::new();
    let mut left = points;
    while left > 0 {
        let c = chunk.min(left) as f64;
        out.push(Package { send: c * dims * element, work: c * dims * work_per_element, result: c * c * element });
        left -= chunk.min(left);
    }
    Ok(out)
}

pub(super) fn task_farm(ctx: &ProcessContext<'_>) -> Result<Box<dyn Behavior>, BehaviorError> {
    let slave = ctx.str_or("slave", "slave")?;
    let spec = FarmSpec::common(ctx, task_farm_packages(ctx, &slave)?)?;
    build(ctx, spec, false)
}

pub(super) fn task_farm_prefetch(ctx: &ProcessContext<'_>) -> Result<Box<dyn Behavior>, BehaviorError> {
    let slave = ctx.str_or("slave", "slave")?;
    let spec = FarmSpec::common(ctx, task_farm_packages(ctx, &slave)?)?;
    build(ctx, spec, true)
}

pub(super) fn vector_similarity(ctx: &ProcessContext<'_>) -> Result<Box<dyn Behavior>, BehaviorError> {
    let mut spec = FarmSpec::common(ctx, similarity_packages(ctx)?)?;
    if ctx.raw("op_kind").is_none() {
        spec.kind = "similarity".into();
    }
    build(ctx, spec, false)
}

fn build(ctx: &ProcessContext<'_>, spec: FarmSpec, prefetch: bool) -> Result<Box<dyn Behavior>, BehaviorError> {
    if (spec.uses_store() || prefetch) && ctx.instances(&spec.store) != 1 {
        return Err(ctx.param_error(
            "store",
            format!("remote fetches need exactly one '{}' instance, found {}", spec.store, ctx.instances(&spec.store)),
        ));
    }
    if prefetch {
        if !spec.uses_store() {
            return Err(ctx.param_error("remote_fetch_size_b", "prefetching needs remote_fetch_size_b > 0"));
        }
        let n = ctx.instances(&spec.slave);
        if ctx.instances(&spec.fetcher) != n {
            return Err(ctx.param_error("fetcher", format!("need one '{}' per slave ({n})", spec.fetcher)));
        }
        for i in 0..n {
            let s = ctx.device_of(&Address::new(&spec.slave, i));
            let f = ctx.device_of(&Address::new(&spec.fetcher, i));
            if s != f {
                return Err(ctx.param_error("fetcher", format!("fetcher #{i} is not on the device of slave #{i}")));
            }
        }
    }
    let role = ctx.role()?;
    let me = ctx.address.clone();
    Ok(match (role.as_str(), prefetch) {
        ("master", false) => Box::new(Master::new(ctx, spec)),
        ("master", true) => Box::new(PrefetchMaster::new(ctx, spec)),
        ("slave", _) => {
            let rank = me.index;
            Box::new(Slave { master: Address::new(&spec.master, 0), prefetch, rank, spec, me, pending: Vec::new(), last_served: false })
        }
        ("store", _) => Box::new(Store { spec, served: 0, replying: None }),
        ("fetcher", true) => Box::new(Fetcher { master: Address::new(&spec.master, 0), spec, me, pending: Vec::new(), last_served: false }),
        (other, _) => return Err(unknown_role(ctx, other)),
    })
}

fn stop(to: Address) -> CommOp {
    CommOp::Send { to, tag: STOP, size: 0.0, payload: 0 }
}

fn expect_one<'o>(ctx_addr: &Address, last: &'o Outcome) -> Result<&'o Completion, BehaviorError> {
    last.completions().first().ok_or_else(|| BehaviorError::Protocol {
        process: ctx_addr.to_string(),
        reason: "expected a message".into(),
    })
}

// Whoever receives the last package stops on its own after serving it.
// Everyone else gets STOP as soon as it runs out of work, so the shutdown
// overlaps with the packages still in flight.

#[derive(Debug, Clone, Copy, PartialEq)]
enum MasterState {
    Init,
    Collecting,
    AwaitingResult,
    Done,
}

struct Master {
    me: Address,
    spec: FarmSpec,
    slaves: Vec<Address>,
    next: usize,
    running: Vec<Option<usize>>,
    state: MasterState,
}

impl Master {
    fn new(ctx: &ProcessContext<'_>, spec: FarmSpec) -> Self {
        let slaves = ctx.peers(&spec.slave);
        Master {
            me: ctx.address.clone(),
            running: vec![None; slaves.len()],
            slaves,
            spec,
            next: 0,
            state: MasterState::Init,
        }
    }

    /// The next package for slave `s`, or STOP when there is none and the
    /// slave will not stop by itself.
    fn refill(&mut self, s: usize, last_run: Option<usize>) -> Option<CommOp> {
        let to = self.slaves[s].clone();
        if self.next < self.spec.packages.len() {
            let pkg = self.next;
            self.next += 1;
            self.running[s] = Some(pkg);
            return Some(CommOp::Send { to, tag: WORK, size: self.spec.packages[pkg].send, payload: pkg as u64 });
        }
        (last_run != Some(self.spec.packages.len() - 1)).then(|| stop(to))
    }
}

impl Behavior for Master {
    fn next_op(&mut self, last: &Outcome) -> Result<Option<Op>, BehaviorError> {
        loop {
            let parts: Vec<CommOp> = match self.state {
                MasterState::Init => {
                    self.state = MasterState::Collecting;
                    (0..self.slaves.len()).filter_map(|s| self.refill(s, None)).collect()
                }
                MasterState::Collecting => {
                    if self.running.iter().all(Option::is_none) {
                        self.state = MasterState::Done;
                        return Ok(None);
                    }
                    self.state = MasterState::AwaitingResult;
                    return Ok(Some(Op::recv(Source::Process(self.spec.slave.clone()), Some(RESULT))));
                }
                MasterState::AwaitingResult => {
                    let from = &expect_one(&self.me, last)?.peer;
                    let s = from.index as usize;
                    let Some(done) = self.running.get_mut(s).and_then(Option::take) else {
                        return Err(BehaviorError::Protocol {
                            process: self.me.to_string(),
                            reason: format!("unexpected result from {from}"),
                        });
                    };
                    self.state = MasterState::Collecting;
                    self.refill(s, Some(done)).into_iter().collect()
                }
                MasterState::Done => return Ok(None),
            };
            if !parts.is_empty() {
                return Ok(Some(Op::Comm(parts)));
            }
        }
    }
}

/// Master that keeps every slave one package ahead: while a slave computes
/// package i, its fetcher is already pulling the data of package i+1.
struct PrefetchMaster {
    me: Address,
    spec: FarmSpec,
    slaves: Vec<Address>,
    fetchers: Vec<Address>,
    next: usize,
    prefetched: Vec<Option<usize>>,
    running: Vec<Option<usize>>,
    slave_done: Vec<bool>,
    fetcher_done: Vec<bool>,
    phase: PrefetchPhase,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PrefetchPhase {
    Init,
    FirstPrefetchSent,
    FirstWorkSent,
    Collecting,
    AwaitingResult,
    Done,
}

impl PrefetchMaster {
    fn new(ctx: &ProcessContext<'_>, spec: FarmSpec) -> Self {
        let slaves = ctx.peers(&spec.slave);
        let n = slaves.len();
        PrefetchMaster {
            me: ctx.address.clone(),
            fetchers: ctx.peers(&spec.fetcher),
            slaves,
            spec,
            next: 0,
            prefetched: vec![None; n],
            running: vec![None; n],
            slave_done: vec![false; n],
            fetcher_done: vec![false; n],
            phase: PrefetchPhase::Init,
        }
    }

    fn last_pkg(&self) -> usize {
        self.spec.packages.len() - 1
    }

    /// Orders the next package from fetcher `s`, or stops it.
    fn prefetch(&mut self, s: usize) -> Option<CommOp> {
        if self.fetcher_done[s] {
            return None;
        }
        let to = self.fetchers[s].clone();
        if self.next >= self.spec.packages.len() {
            self.fetcher_done[s] = true;
            return Some(stop(to));
        }
        let pkg = self.next;
        self.next += 1;
        self.prefetched[s] = Some(pkg);
        self.fetcher_done[s] = pkg == self.last_pkg();
        Some(CommOp::Send { to, tag: PREFETCH, size: 0.0, payload: pkg as u64 })
    }

    /// Hands slave `s` its prefetched package, or stops it.
    fn start_work(&mut self, s: usize) -> Option<CommOp> {
        if self.slave_done[s] {
            return None;
        }
        let to = self.slaves[s].clone();
        let Some(pkg) = self.prefetched[s].take() else {
            self.slave_done[s] = true;
            return Some(stop(to));
        };
        self.running[s] = Some(pkg);
        self.slave_done[s] = pkg == self.last_pkg();
        Some(CommOp::Send { to, tag: WORK, size: self.spec.packages[pkg].send, payload: pkg as u64 })
    }
}

impl Behavior for PrefetchMaster {
    fn next_op(&mut self, last: &Outcome) -> Result<Option<Op>, BehaviorError> {
        let n = self.slaves.len();
        loop {
            let parts: Vec<CommOp> = match self.phase {
                PrefetchPhase::Init => {
                    self.phase = PrefetchPhase::FirstPrefetchSent;
                    (0..n).filter_map(|s| self.prefetch(s)).collect()
                }
                PrefetchPhase::FirstPrefetchSent => {
                    self.phase = PrefetchPhase::FirstWorkSent;
                    (0..n).filter_map(|s| self.start_work(s)).collect()
                }
                PrefetchPhase::FirstWorkSent => {
                    self.phase = PrefetchPhase::Collecting;
                    let busy: Vec<usize> = (0..n).filter(|&s| self.running[s].is_some()).collect();
                    busy.into_iter().filter_map(|s| self.prefetch(s)).collect()
                }
                PrefetchPhase::Collecting => {
                    if self.running.iter().all(Option::is_none) {
                        self.phase = PrefetchPhase::Done;
                        return Ok(None);
                    }
                    self.phase = PrefetchPhase::AwaitingResult;
                    return Ok(Some(Op::recv(Source::Process(self.spec.slave.clone()), Some(RESULT))));
                }
                PrefetchPhase::AwaitingResult => {
                    let from = &expect_one(&self.me, last)?.peer;
                    let s = from.index as usize;
                    if self.running.get_mut(s).and_then(Option::take).is_none() {
                        return Err(BehaviorError::Protocol {
                            process: self.me.to_string(),
                            reason: format!("unexpected result from {from}"),
                        });
                    }
                    self.phase = PrefetchPhase::Collecting;
                    let mut parts: Vec<CommOp> = self.start_work(s).into_iter().collect();
                    if self.running[s].is_some() {
                        parts.extend(self.prefetch(s));
                    }
                    parts
                }
                PrefetchPhase::Done => return Ok(None),
            };
            if !parts.is_empty() {
                return Ok(Some(Op::Comm(parts)));
            }
        }
    }
}

struct Slave {
    me: Address,
    master: Address,
    rank: u32,
    spec: FarmSpec,
    prefetch: bool,
    /// Remaining ops of the current package, in reverse.
    pending: Vec<Op>,
    last_served: bool,
}

impl Behavior for Slave {
    fn next_op(&mut self, last: &Outcome) -> Result<Option<Op>, BehaviorError> {
        if let Some(op) = self.pending.pop() {
            return Ok(Some(op));
        }
        if self.last_served {
            return Ok(None);
        }
        // The op that just finished was either the start or the wait for work.
        if let Some(msg) = last.completions().first().filter(|c| c.peer == self.master) {
            match msg.tag {
                STOP => return Ok(None),
                WORK => {
                    let pkg = msg.payload;
                    if pkg as usize >= self.spec.packages.len() {
                        return Err(BehaviorError::Protocol {
                            process: self.me.to_string(),
                            reason: format!("unknown package {pkg}"),
                        });
                    }
                    let mut ops = Vec::new();
                    if self.prefetch {
                        let fetcher = Address::new(&self.spec.fetcher, self.rank);
                        ops.push(Op::recv(Source::Instance(fetcher), Some(DATA)));
                    } else if self.spec.uses_store() {
                        let store = Address::new(&self.spec.store, 0);
                        ops.push(Op::send_with(store.clone(), REQUEST, 0.0, pkg));
                        ops.push(Op::recv(Source::Instance(store), Some(DATA)));
                    }
                    ops.push(self.spec.compute(pkg));
                    ops.push(Op::send_with(self.master.clone(), RESULT, self.spec.packages[pkg as usize].result, pkg));
                    if pkg as usize + 1 < self.spec.packages.len() {
                        ops.push(Op::recv(Source::Instance(self.master.clone()), None));
                    } else {
                        self.last_served = true;
                    }
                    ops.reverse();
                    self.pending = ops;
                    return Ok(self.pending.pop());
                }
                other => {
                    return Err(BehaviorError::Protocol {
                        process: self.me.to_string(),
                        reason: format!("unexpected tag {other} from master"),
                    })
                }
            }
        }
        Ok(Some(Op::recv(Source::Instance(self.master.clone()), None)))
    }
}

/// Serves one data request per package, to whoever asks.
struct Store {
    spec: FarmSpec,
    served: usize,
    replying: Option<()>,
}

impl Behavior for Store {
    fn next_op(&mut self, last: &Outcome) -> Result<Option<Op>, BehaviorError> {
        if self.replying.take().is_some() {
            self.served += 1;
        } else if let Some(req) = last.completions().first() {
            self.replying = Some(());
            return Ok(Some(Op::send_with(req.peer.clone(), DATA, self.spec.fetch_size, req.payload)));
        }
        if self.served >= self.spec.packages.len() {
            return Ok(None);
        }
        Ok(Some(Op::recv(Source::Any, Some(REQUEST))))
    }
}

/// Pulls a package's data from the store on the master's order and hands it
/// to its slave over the local channel.
struct Fetcher {
    me: Address,
    master: Address,
    spec: FarmSpec,
    pending: Vec<Op>,
    last_served: bool,
}

impl Behavior for Fetcher {
    fn next_op(&mut self, last: &Outcome) -> Result<Option<Op>, BehaviorError> {
        if let Some(op) = self.pending.pop() {
            return Ok(Some(op));
        }
        if self.last_served {
            return Ok(None);
        }
        if let Some(msg) = last.completions().first().filter(|c| c.peer == self.master) {
            match msg.tag {
                STOP => return Ok(None),
                PREFETCH => {
                    let store = Address::new(&self.spec.store, 0);
                    let slave = Address::new(&self.spec.slave, self.me.index);
                    self.pending = vec![Op::send_with(slave, DATA, 0.0, msg.payload), Op::recv(Source::Instance(store.clone()), Some(DATA))];
                    if (msg.payload as usize) + 1 < self.spec.packages.len() {
                        self.pending.insert(0, Op::recv(Source::Instance(self.master.clone()), None));
                    } else {
                        self.last_served = true;
                    }
                    return Ok(Some(Op::send_with(store, REQUEST, 0.0, msg.payload)));
                }
                other => {
                    return Err(BehaviorError::Protocol {
                        process: self.me.to_string(),
                        reason: format!("unexpected tag {other} from master"),
                    })
                }
            }
        }
        Ok(Some(Op::recv(Source::Instance(self.master.clone()), None)))
    }
}
