//! Corpus replay, scoring, synthetic data, and training-set construction.

pub mod dataset;
pub mod log;
pub mod metrics;
pub mod replay;
pub mod scan;
pub mod synth;

pub use log::{Decision, DecisionLog, LogRecord};
pub use metrics::{evaluate, MetricsReport, MetricsTally};
pub use replay::{replay, replay_events, replay_many, ReplayError, ReplayOutput};
pub use scan::{scan, Violation};
pub use synth::{generate_synthetic, SynthSpec};
