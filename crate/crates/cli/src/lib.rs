//! Config loading, sweeps, CSV output and per-panel figure tables on top of
//! `csesim-core`.

pub mod config;
pub mod figure;
pub mod sweep;

pub use config::{parse_config, parse_config_str, LoadError};
pub use figure::{emit_figure_data, Panel};
pub use sweep::{execute, run_sweep, SweepOptions, SweepResult, SweepSpec};
