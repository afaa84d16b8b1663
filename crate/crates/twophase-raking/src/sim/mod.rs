//! Simulation harness: data generation under configurable measurement
//! error, replicated estimation, and metric aggregation.

mod config;
mod generate;
mod influence;
mod metrics;
mod runner;

pub use config::{
    ErrorScenario, Method, MisclassCoefficients, MisclassModel, ScenarioConfig,
};
pub use generate::{
    apply_error_scenario, calibrate_censoring_bound, generate_cohort,
    misclassification_metrics, MisclassMetrics,
};
pub use influence::{
    export_influence_pairs, linear_r2, Channel, InfluenceDiagnosticConfig, InfluencePair,
};
pub use metrics::{
    aggregate_metrics, MethodEstimate, MethodMetrics, MethodOutcome, MetricsReport,
    ReplicateRecord, Z_95,
};
pub use runner::{calibration_stream, run_batch, run_replication, BatchResult};
