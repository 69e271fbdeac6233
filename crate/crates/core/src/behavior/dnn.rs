//! Data-parallel DNN training: per iteration the master sends the model to
//! every slave, each slave trains on one archive and sends the model back,
//! and the master waits for all of them before the next iteration.
//!
//! Args: `model_size_b`, `archives` (list of byte sizes, or objects with a
//! `size` field), `iterations` (default: one epoch, `ceil(|archives| / k)`),
//! `balanced` (replace every archive by the mean size), `average_size_b`
//! (work of the master's averaging step, default 0 i.e. skipped).

use serde_json::Value;

use super::farm::tags::{MODEL, MODEL_BACK};
use super::{unknown_role, Behavior, BehaviorError, CommOp, Op, Outcome, ProcessContext};
use crate::cost::ComputeOpSpec;
use crate::model::Address;

struct Plan {
    model_size: f64,
    archives: Vec<f64>,
    iterations: u64,
    slaves: Vec<Address>,
}

impl Plan {
    /// Archive trained by slave `rank` in iteration `iter`.
    fn archive(&self, iter: u64, rank: usize) -> f64 {
        let k = self.slaves.len() as u64;
        let i = (iter * k + rank as u64) % self.archives.len() as u64;
        self.archives[i as usize]
    }
}

fn archive_sizes(ctx: &ProcessContext<'_>) -> Result<Vec<f64>, BehaviorError> {
    let list = match ctx.raw("archives") {
        Some(Value::Array(items)) => items,
        Some(other) => return Err(ctx.param_error("archives", format!("expected a list, got {other}"))),
        None => return Err(ctx.param_error("archives", "missing")),
    };
    if list.is_empty() {
        return Err(ctx.param_error("archives", "archive list is empty"));
    }
    list.iter()
        .map(|a| {
            let size = match a {
                Value::Object(o) => o.get("size").and_then(Value::as_f64),
                v => v.as_f64(),
            };
            size.filter(|s| *s >= 0.0 && s.is_finite())
                .ok_or_else(|| ctx.param_error("archives", format!("bad archive {a}")))
        })
        .collect()
}

pub(super) fn dnn_training(ctx: &ProcessContext<'_>) -> Result<Box<dyn Behavior>, BehaviorError> {
    let slave = ctx.str_or("slave", "slave")?;
    let master = ctx.str_or("master", "master")?;
    let slaves = ctx.peers(&slave);
    if slaves.is_empty() {
        return Err(ctx.param_error("slave", format!("no instances of '{slave}' are mapped")));
    }
    let mut archives = archive_sizes(ctx)?;
    if ctx.bool_or("balanced", false)? {
        let mean = archives.iter().sum::<f64>() / archives.len() as f64;
        archives.iter_mut().for_each(|a| *a = mean);
    }
    let k = slaves.len() as u64;
    let iterations = match ctx.u64_opt("iterations")? {
        Some(0) => return Err(ctx.param_error("iterations", "must be >= 1")),
        Some(n) => n,
        None => (archives.len() as u64).div_ceil(k),
    };
    let plan = Plan { model_size: ctx.f64_required("model_size_b")?, archives, iterations, slaves };
    let role = ctx.role()?;
    Ok(match role.as_str() {
        "master" => Box::new(Master { plan, iter: 0, step: 0, average: ctx.f64_or("average_size_b", 0.0)? }),
        "slave" => {
            let rank = ctx.address.index as usize;
            let master = Address::new(&master, 0);
            Box::new(Slave { plan, master, rank, iter: 0, step: 0 })
        }
        other => return Err(unknown_role(ctx, other)),
    })
}

struct Master {
    plan: Plan,
    iter: u64,
    step: u8,
    average: f64,
}

impl Behavior for Master {
    fn next_op(&mut self, _last: &Outcome) -> Result<Option<Op>, BehaviorError> {
        loop {
            if self.iter >= self.plan.iterations {
                return Ok(None);
            }
            let step = self.step;
            self.step = (self.step + 1) % 3;
            match step {
                0 => {
                    let sends = self.plan.slaves.iter().map(|s| CommOp::Send {
                        to: s.clone(),
                        tag: MODEL,
                        size: self.plan.model_size,
                        payload: self.iter,
                    });
                    return Ok(Some(Op::Comm(sends.collect())));
                }
                1 => {
                    let recvs = self.plan.slaves.iter().map(|s| CommOp::Recv {
                        from: super::Source::Instance(s.clone()),
                        tag: Some(MODEL_BACK),
                    });
                    return Ok(Some(Op::Comm(recvs.collect())));
                }
                _ => {
                    self.iter += 1;
                    if self.average > 0.0 {
                        return Ok(Some(Op::Compute(ComputeOpSpec::new("average", self.average))));
                    }
                }
            }
        }
    }
}

struct Slave {
    plan: Plan,
    master: Address,
    rank: usize,
    iter: u64,
    step: u8,
}

impl Behavior for Slave {
    fn next_op(&mut self, _last: &Outcome) -> Result<Option<Op>, BehaviorError> {
        if self.iter >= self.plan.iterations {
            return Ok(None);
        }
        let step = self.step;
        self.step = (self.step + 1) % 3;
        Ok(Some(match step {
            0 => Op::recv(super::Source::Instance(self.master.clone()), Some(MODEL)),
            1 => Op::Compute(ComputeOpSpec::new("train", self.plan.archive(self.iter, self.rank))),
            _ => {
                self.iter += 1;
                Op::send_with(self.master.clone(), MODEL_BACK, self.plan.model_size, self.iter - 1)
            }
        }))
    }
}
