//! Config-driven experiment runner behind the `sa-lab` binary.
//!
//! Every command reads an [`ExperimentConfig`], writes flat files (CSV, JSON
//! and a per-run README) into the configured output directory, and maps its
//! outcome to an exit status with [`exit_code`]: 0 pass, 1 invariant
//! failure, 2 config error, 3 infeasible bound request.

pub mod config;
mod commands;

pub use commands::{
    cmd_bound, cmd_calibrate, cmd_simulate, cmd_verify, exit_code, BoundOutput, DeltaRow, SimulateSummary, Status,
    VerifyItem, VerifyReport, EVALUATION_STREAM,
};
pub use config::{DSource, ExperimentConfig, ProblemSpec, StitchConfig};
