//! `op_list`: an explicit operation sequence given in the behavior args.
//!
//! ```json
//! {"ops": [
//!   {"compute": 2e10, "kind": "train", "cores": 1},
//!   {"send": "master#0", "size": 1e6, "tag": 7},
//!   {"recv": "slave", "tag": 7},
//!   {"multi": [{"send": "a#0", "size": 1}, {"recv": "*"}]}
//! ]}
//! ```
//!
//! `recv` accepts an instance address (`name#i`), a process name, or `*`.
//! Without `tag` a receive matches any tag; sends default to tag 0.

use serde_json::Value;

use super::{Behavior, BehaviorError, CommOp, Op, ProcessContext, Script, Source};
use crate::cost::ComputeOpSpec;
use crate::model::Address;

pub(super) fn op_list(ctx: &ProcessContext<'_>) -> Result<Box<dyn Behavior>, BehaviorError> {
    let ops = match ctx.raw("ops") {
        None => Vec::new(),
        Some(Value::Array(items)) => items,
        Some(other) => return Err(ctx.param_error("ops", format!("expected a list, got {other}"))),
    };
    let parsed = ops.iter().map(|v| parse_op(ctx, v)).collect::<Result<Vec<_>, _>>()?;
    Ok(Box::new(Script::new(parsed)))
}

fn parse_op(ctx: &ProcessContext<'_>, v: &Value) -> Result<Op, BehaviorError> {
    let bad = |why: &str| ctx.param_error("ops", format!("{why}: {v}"));
    let obj = v.as_object().ok_or_else(|| bad("operation must be an object"))?;
    if let Some(size) = obj.get("compute") {
        let size = size.as_f64().ok_or_else(|| bad("compute size must be a number"))?;
        let kind = obj.get("kind").and_then(Value::as_str).unwrap_or("compute");
        let cores = obj.get("cores").and_then(Value::as_u64).unwrap_or(1);
        if cores == 0 {
            return Err(bad("cores must be >= 1"));
        }
        return Ok(Op::Compute(ComputeOpSpec::new(kind, size).with_cores(cores as u32)));
    }
    if let Some(parts) = obj.get("multi") {
        let parts = parts.as_array().ok_or_else(|| bad("multi must be a list"))?;
        let mut comm = Vec::new();
        for p in parts {
            match parse_op(ctx, p)? {
                Op::Comm(c) => comm.extend(c),
                Op::Compute(_) => return Err(bad("multi may only hold send/recv")),
            }
        }
        return Ok(Op::Comm(comm));
    }
    let tag = match obj.get("tag") {
        None => None,
        Some(t) => Some(t.as_u64().and_then(|t| u32::try_from(t).ok()).ok_or_else(|| bad("bad tag"))?),
    };
    if let Some(to) = obj.get("send") {
        let to = to.as_str().and_then(Address::parse).ok_or_else(|| bad("send target must be 'name#index'"))?;
        let size = obj.get("size").and_then(Value::as_f64).unwrap_or(0.0);
        if size.is_nan() || size < 0.0 {
            return Err(bad("size must be >= 0"));
        }
        let payload = obj.get("payload").and_then(Value::as_u64).unwrap_or(0);
        return Ok(Op::Comm(vec![CommOp::Send { to, tag: tag.unwrap_or(0), size, payload }]));
    }
    if let Some(from) = obj.get("recv") {
        let from = from.as_str().ok_or_else(|| bad("recv source must be a string"))?;
        let from = if from == "*" {
            Source::Any
        } else if let Some(addr) = Address::parse(from) {
            Source::Instance(addr)
        } else {
            Source::Process(from.to_string())
        };
        return Ok(Op::Comm(vec![CommOp::Recv { from, tag }]));
    }
    Err(bad("unknown operation"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::Outcome;
    use crate::model::{Device, ParamVector};
    use std::collections::BTreeMap;

    #[test]
    fn parses_every_form() {
        let args: serde_json::Map<String, Value> = serde_json::from_str(
            r#"{"ops":[{"compute":5,"kind":"k","cores":2},{"send":"b#1","size":3,"tag":4},
                {"recv":"b"},{"recv":"*","tag":2},{"multi":[{"send":"b#0"},{"recv":"b#0"}]}]}"#,
        )
        .unwrap();
        let addr = Address::new("a", 0);
        let dev = Device { id: "d".into(), kind: "cpu".into(), performance: 1.0, ncores: 1, p_idle: 0.0, p_peak: 0.0 };
        let params = ParamVector::new();
        let placement = BTreeMap::new();
        let ctx = ProcessContext {
            address: &addr,
            device: &dev,
            behavior: "op_list",
            args: &args,
            params: &params,
            placement: &placement,
        };
        let mut b = op_list(&ctx).unwrap();
        let mut ops = Vec::new();
        while let Some(op) = b.next_op(&Outcome::Start).unwrap() {
            ops.push(op);
        }
        assert_eq!(ops.len(), 5);
        assert_eq!(ops[0], Op::Compute(ComputeOpSpec::new("k", 5.0).with_cores(2)));
        assert_eq!(ops[2], Op::recv(Source::Process("b".into()), None));
        assert_eq!(ops[3], Op::recv(Source::Any, Some(2)));
        assert!(matches!(&ops[4], Op::Comm(parts) if parts.len() == 2));

        let bad: serde_json::Map<String, Value> = serde_json::from_str(r#"{"ops":[{"jump":1}]}"#).unwrap();
        let ctx = ProcessContext { args: &bad, ..ctx };
        assert!(op_list(&ctx).is_err());
    }
}
