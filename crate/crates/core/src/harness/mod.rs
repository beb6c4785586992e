//! Presets, configs, verification suites and run drivers behind `gdt`.

pub mod config;
pub mod presets;
pub mod run;
pub mod verify;

pub use config::{ExperimentConfig, ResolvedRun};
pub use presets::{builtin_presets, ExperimentPreset, FactorRole};
pub use run::{execute, run_preset, sweep, RunOutput, RunRecord, CSV_HEADER};
pub use verify::{run_verify, VerifyOptions, VerifyReport};
