//! Discrete-event simulator for opportunistic use of backfill slots on a
//! batch-scheduled cluster.

pub mod metrics;
pub mod scheduler;
pub mod simcore;
pub mod workload;
pub mod broker;
pub mod nge;
pub mod harness;
