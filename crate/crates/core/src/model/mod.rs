//! Formal model of systems, applications, mappings and parameter spaces.

mod application;
mod mapping;
mod params;
mod system;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use application::{Application, Bound, Capabilities, ProcessImpl};
pub use mapping::{check_references, validate_mapping, Mapping, Violation};
pub use params::{Domain, ParamSpace, ParamValue, ParamVector};
pub use system::{Device, NetworkLink, SystemModel};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown device '{0}'")]
    UnknownDevice(String),
    #[error("unknown process '{0}'")]
    UnknownProcess(String),
    #[error("no route between '{from}' and '{to}'")]
    Unroutable { from: String, to: String },
}

impl ModelError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::Invalid { field: field.into(), reason: reason.into() }
    }
}

/// Address of one process instance: process name and instance index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Address {
    pub process: String,
    pub index: u32,
}

impl Address {
    pub fn new(process: impl Into<String>, index: u32) -> Self {
        Address { process: process.into(), index }
    }

    /// Parses `name#index`.
    pub fn parse(text: &str) -> Option<Self> {
        let (name, idx) = text.rsplit_once('#')?;
        Some(Address::new(name, idx.parse().ok()?))
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.process, self.index)
    }
}
