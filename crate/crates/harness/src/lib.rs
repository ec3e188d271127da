//! Configuration-driven experiment runner for `svsa-core`.
//!
//! An experiment is described by a TOML file naming a registry id, a seed
//! and a `[params]` table. Running it writes `trace.csv`, `plot.csv`,
//! `summary.json` and `config.json` under the output root (`$SVSA_OUT`,
//! default `./svsa-out`).

pub mod config;
pub mod error;
pub mod experiments;
pub mod verify;

pub use config::{lookup, output_root, parse_seed_range, ExperimentConfig, REGISTRY};
pub use error::{HarnessError, Result};
pub use experiments::{read_summary, run_experiment, run_experiment_in, summary_path, SummaryRecord};
pub use verify::{format_table, verify_all, verify_with, VerifyOptions, VerifyRow};
