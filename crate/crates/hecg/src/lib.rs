//! File formats, experiment commands and LLM backends for the `hecg_core`
//! plan-execution engine.
//!
//! The `hecg` binary is a thin wrapper over [`harness`]; the modules are
//! public so tests and other tools can drive experiments directly.

pub mod config;
pub mod harness;
pub mod llm;
pub mod operator;
pub mod report;
pub mod trajectory;

pub use config::ExperimentConfig;
pub use harness::{cmd_ablate, cmd_report, cmd_run, cmd_sweep, cmd_validate, HarnessError, RunOptions};
