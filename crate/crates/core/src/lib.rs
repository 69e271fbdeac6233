//! Discrete-event simulation of hybrid parallel applications on models of
//! heterogeneous HPC systems, with mapping heuristics, parameter sweeps and
//! Pareto analysis of execution time against power.

pub mod behavior;
pub mod cost;
pub mod engine;
pub mod model;
pub mod sched;
pub mod config;
pub mod sweep;
