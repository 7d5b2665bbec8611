//! Configuration, tabular output and task execution for the command line.

pub mod config;
pub mod run;
pub mod table;

pub use config::{RunConfig, TaskKind};
pub use run::{exit_code, run, Manifest, RunOptions, RunStatus};
pub use table::Table;
