//! Scenario configuration, the closed-loop runner, metrics and reports.

mod metrics;
mod report;
mod run;
mod scenario;

pub use metrics::{compute_metrics, MetricAccumulator, Metrics, SettlingEvent, SettlingTracker, SETTLING_BAND};
pub use report::{
    benchmark_step_latency, compare, dob_step_response, sweep_initial_conditions, write_trace_csv, CompareReport,
    DobConvergence, Latency, OrderingCheck, Summary, SweepRow, SweepTable, CSV_HEADER,
};
pub use run::{run_scenario, Fault, LyapunovAudit, Sample, ScenarioResult, Simulation, TraceRecord};
pub use scenario::{
    default_methods, BaselineConfig, ControllerConfig, FtcConfig, FtcGainValues, PidConfig, PlantModel, Role,
    Scenario, SimConfig,
};
