//! Trace-driven discrete-event simulation of agentic rollouts.

pub mod engine;
pub mod metrics;
pub mod trace;

pub use engine::{run, LogEntry, Policy, SimConfig, SimError, SimOutput, DEFAULT_TIMEOUT};
pub use metrics::{percentile, summarize, write_records, SimRecord, Summary, SummaryError, WindowPoint};
pub use trace::{
    gen_trace, measured_active_ratio, plan, read_trace, trace_to_string, write_trace, ActSpec, ActionKind,
    DurationDist, GenError, GenParams, Scaling, Segment, TraceError, TrajectorySpec, UnitsField,
};
