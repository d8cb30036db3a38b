//! Command-line front end for `distlap-core`: TOML job configs, the built-in example
//! registry, deterministic JSON reports and golden comparison.

pub mod config;
pub mod error;
pub mod golden;
pub mod registry;
pub mod report;
pub mod run;

pub use config::JobConfig;
pub use error::{CliError, Result};
pub use report::{Format, Report};
pub use run::{run, Artifact, Outcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ANALYSIS: i32 = 3;
pub const EXIT_GOLDEN: i32 = 4;
