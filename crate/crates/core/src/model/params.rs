//! Application execution parameters and the spaces they are drawn from.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Str(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Int(v) => Some(v as f64),
            ParamValue::Real(v) => Some(v),
            ParamValue::Str(_) => None,
        }
    }

    /// Integral value; reals are accepted only when they carry no fraction.
    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            ParamValue::Int(v) => Some(v),
            ParamValue::Real(v) if v.fract() == 0.0 && v.abs() < 9.0e15 => Some(v as i64),
            _ => None,
        }
    }

    /// Parses the textual form used on the command line (`nslaves=4`).
    pub fn parse(text: &str) -> ParamValue {
        if let Ok(v) = text.parse::<i64>() {
            ParamValue::Int(v)
        } else if let Ok(v) = text.parse::<f64>() {
            ParamValue::Real(v)
        } else {
            ParamValue::Str(text.to_string())
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Str(v) => f.write_str(v),
        }
    }
}

/// A point in the space of execution parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub BTreeMap<String, ParamValue>);

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: ParamValue) -> Self {
        self.0.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ParamValue) {
        self.0.insert(name.into(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamValue)> {
        self.0.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Domain of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Domain {
    Range {
        from: i64,
        to: i64,
        #[serde(default = "unit_step")]
        step: i64,
    },
    Values { values: Vec<ParamValue> },
}

fn unit_step() -> i64 {
    1
}

impl Domain {
    /// Upper bound on a single domain's cardinality.
    pub const MAX_VALUES: usize = 1_000_000;

    pub fn values(&self, name: &str) -> Result<Vec<ParamValue>, ModelError> {
        match *self {
            Domain::Range { from, to, step } => {
                if step <= 0 {
                    return Err(ModelError::invalid(format!("sweep.{name}.step"), "step must be > 0 (unbounded domain)"));
                }
                if to < from {
                    return Err(ModelError::invalid(format!("sweep.{name}"), "empty range (to < from)"));
                }
                let count = ((to - from) / step) as u64 + 1;
                if count > Self::MAX_VALUES as u64 {
                    return Err(ModelError::invalid(format!("sweep.{name}"), format!("domain has {count} values")));
                }
                Ok((0..count as i64).map(|i| ParamValue::Int(from + i * step)).collect())
            }
            Domain::Values { ref values } => {
                if values.is_empty() {
                    return Err(ModelError::invalid(format!("sweep.{name}.values"), "empty value list"));
                }
                Ok(values.clone())
            }
        }
    }

    pub fn contains(&self, value: &ParamValue) -> bool {
        match *self {
            Domain::Range { from, to, step } => match value.as_i64() {
                Some(v) => step > 0 && v >= from && v <= to && (v - from) % step == 0,
                None => false,
            },
            Domain::Values { ref values } => values.contains(value),
        }
    }
}

/// Per-name parameter domains.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSpace(pub BTreeMap<String, Domain>);

impl ParamSpace {
    pub fn contains(&self, v: &ParamVector) -> bool {
        self.0.iter().all(|(name, dom)| v.get(name).is_some_and(|x| dom.contains(x)))
    }

    /// Cartesian product of the domains over `base`, names in lexicographic
    /// order with the last name varying fastest.
    pub fn expand(&self, base: &ParamVector) -> Result<Vec<ParamVector>, ModelError> {
        let mut out = vec![base.clone()];
        for (name, dom) in &self.0 {
            let values = dom.values(name)?;
            if out.len().saturating_mul(values.len()) > Domain::MAX_VALUES {
                return Err(ModelError::invalid("sweep", "parameter space too large to expand"));
            }
            out = out
                .into_iter()
                .flat_map(|v| {
                    values.iter().map(move |x| {
                        let mut v = v.clone();
                        v.insert(name.clone(), x.clone());
                        v
                    })
                })
                .collect();
        }
        Ok(out)
    }
}
