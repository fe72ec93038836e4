//! Harness around `vino-core`: tensor container I/O, synthetic scenarios,
//! metrics, run configuration, PPM export, the acceptance checks and the
//! `vino` command line.

pub mod checks;
pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod metrics;
pub mod ppm;
pub mod run;
pub mod scenario;

pub use config::RunConfig;
pub use container::{Container, Dtype, Kind};
pub use error::{HarnessError, Result};
pub use scenario::{synth_video, ScenarioSpec};
