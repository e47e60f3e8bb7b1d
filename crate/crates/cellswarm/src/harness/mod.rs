//! Scenario definition, the discrete-event scheduler, mobility and
//! resource timelines, fault injection, trace and metrics output.

pub mod metrics;
pub mod runner;
pub mod scenario;
pub mod scheduler;
pub mod trace;

pub use metrics::{summarize, FailureDetection, Reorganization, RunMetrics};
pub use runner::{run, run_with_observer, MachineEndState, RunOutput};
pub use scenario::{
    ConfigError, MachineCommand, MachineSpec, ResourceField, ScenarioConfig, TimelineAction,
    TimelineEntry,
};
pub use trace::{replay_check, trace_to_jsonl, ReorgTrigger, TraceEvent, TraceKind};
