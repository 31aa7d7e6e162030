//! Discrete-time simulator of content-selection errors in task-oriented
//! V2X cooperative perception.
//!
//! Vehicles detect static exogenous variables, decide per intended receiver
//! whether each detection is redundant or irrelevant, and broadcast the rest
//! over a slotted channel with congestion control. The [`metrics`] module
//! counts the omissions that turn out to be wrong.

pub mod channel;
pub mod config;
pub mod congestion;
pub mod engine;
pub mod metrics;
pub mod rng;
pub mod scenario;
pub mod tx_pipeline;

pub use config::{ConfigError, SimConfig};
pub use engine::{run_simulation, EngineError, RunOutput, Simulation};
pub use metrics::{Metric, MetricName, MetricsReport, RunCounts};
pub use rng::{RngStreams, Stream};
pub use scenario::{VarId, VehicleId, World};
