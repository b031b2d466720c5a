//! Library behind the `mertonlab` binary: scenario loading and the batch
//! commands (solve, simulate, verify, sweep).

pub mod commands;
pub mod scenario;

pub use commands::{cmd_simulate, cmd_solve, cmd_sweep, cmd_verify, resolve_out_dir};
pub use scenario::{RunSettings, ScenarioFile};
