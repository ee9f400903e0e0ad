//! Experiment driver: training runs, bandwidth sweeps, channel-mode
//! comparison and queueing validation, all emitting CSV.

pub mod config;
pub mod error;
pub mod evaluate;
pub mod events;
pub mod stats;
pub mod train;
pub mod validate;

pub use config::{ExperimentSpec, Mode, PolicyKind};
pub use error::HarnessError;
pub use events::{EventRecord, EventSink};
