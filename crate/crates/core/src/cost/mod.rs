//! The modeling functions driving the simulator: computation time,
//! communication time and instantaneous device power, plus least-squares
//! calibration of the linear computation model.

mod fit;

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Device, NetworkLink};

pub use fit::{fit_linear_model, LinearFit, Sample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("model domain error: {0}")]
    Domain(String),
    #[error("singular fit: {0}")]
    Singular(String),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

/// A computation operation as seen by the cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeOpSpec {
    /// Operation kind, used to pick the cost model (`<process>.<kind>`).
    pub kind: String,
    /// Bytes (or abstract work units) processed.
    pub data_size: f64,
    /// Cores occupied while running.
    pub core_demand: u32,
}

impl ComputeOpSpec {
    pub fn new(kind: impl Into<String>, data_size: f64) -> Self {
        ComputeOpSpec { kind: kind.into(), data_size, core_demand: 1 }
    }

    pub fn with_cores(mut self, cores: u32) -> Self {
        self.core_demand = cores;
        self
    }
}

/// `t = phi * data_size / performance + psi`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearComputeModel {
    pub phi: f64,
    pub psi: f64,
}

impl Default for LinearComputeModel {
    fn default() -> Self {
        LinearComputeModel { phi: 1.0, psi: 0.0 }
    }
}

impl LinearComputeModel {
    pub fn new(phi: f64, psi: f64) -> Self {
        LinearComputeModel { phi, psi }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.phi * x + self.psi
    }
}

pub trait ComputeCost: Debug + Send + Sync {
    fn time(&self, op: &ComputeOpSpec, device: &Device) -> Result<f64, CostError>;
}

pub trait CommCost: Debug + Send + Sync {
    fn time(&self, data_size: f64, route: &[&NetworkLink]) -> f64;
}

impl ComputeCost for LinearComputeModel {
    fn time(&self, op: &ComputeOpSpec, device: &Device) -> Result<f64, CostError> {
        comp_time(op, device, self)
    }
}

/// Sum over hops of `t_startup + data_size / bandwidth`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearCommModel;

impl CommCost for LinearCommModel {
    fn time(&self, data_size: f64, route: &[&NetworkLink]) -> f64 {
        comm_time(data_size, route)
    }
}

pub fn comp_time(op: &ComputeOpSpec, device: &Device, model: &LinearComputeModel) -> Result<f64, CostError> {
    if op.data_size.is_nan() || op.data_size < 0.0 {
        return Err(CostError::Domain(format!("negative data size {} for '{}'", op.data_size, op.kind)));
    }
    let t = model.eval(op.data_size / device.performance);
    if !(t >= 0.0 && t.is_finite()) {
        return Err(CostError::Domain(format!(
            "computation '{}' on '{}' yields time {t} (phi={}, psi={})",
            op.kind, device.id, model.phi, model.psi
        )));
    }
    Ok(t)
}

pub fn comm_time(data_size: f64, route: &[&NetworkLink]) -> f64 {
    route.iter().map(|l| l.t_startup + data_size / l.bandwidth).sum()
}

/// Instantaneous power draw with `active_core_demand` cores busy, clamped at
/// the peak once every core is in use.
pub fn power_at(device: &Device, active_core_demand: u64) -> f64 {
    let load = (active_core_demand as f64 / f64::from(device.ncores)).min(1.0);
    device.p_idle + load * (device.p_peak - device.p_idle)
}

/// Cost models keyed by `(process, operation kind)`, with a shared default
/// computation model and one communication model.
#[derive(Debug, Clone)]
pub struct CostRegistry {
    compute: BTreeMap<(String, String), Arc<dyn ComputeCost>>,
    default_compute: Arc<dyn ComputeCost>,
    comm: Arc<dyn CommCost>,
}

impl Default for CostRegistry {
    fn default() -> Self {
        CostRegistry {
            compute: BTreeMap::new(),
            default_compute: Arc::new(LinearComputeModel::default()),
            comm: Arc::new(LinearCommModel),
        }
    }
}

impl CostRegistry {
    /// Registry holding the linear models from an application's
    /// `cost_models` table (keys `<process>.<op-kind>`).
    pub fn from_models(models: &BTreeMap<String, LinearComputeModel>) -> Self {
        let mut reg = CostRegistry::default();
        for (key, model) in models {
            if let Some((process, kind)) = key.split_once('.') {
                reg.set_compute(process, kind, Arc::new(*model));
            }
        }
        reg
    }

    pub fn set_compute(&mut self, process: &str, kind: &str, model: Arc<dyn ComputeCost>) {
        self.compute.insert((process.to_string(), kind.to_string()), model);
    }

    pub fn set_default_compute(&mut self, model: Arc<dyn ComputeCost>) {
        self.default_compute = model;
    }

    pub fn set_comm(&mut self, model: Arc<dyn CommCost>) {
        self.comm = model;
    }

    pub fn compute_time(&self, process: &str, op: &ComputeOpSpec, device: &Device) -> Result<f64, CostError> {
        self.compute
            .get(&(process.to_string(), op.kind.clone()))
            .unwrap_or(&self.default_compute)
            .time(op, device)
    }

    pub fn comm_time(&self, data_size: f64, route: &[&NetworkLink]) -> f64 {
        self.comm.time(data_size, route)
    }
}
