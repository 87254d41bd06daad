//! Monte-Carlo experiment harness: configuration, trials, aggregation and
//! CSV output.

pub mod aggregate;
pub mod config;
pub mod run;
pub mod trial;

pub use aggregate::{aggregate, emit_csv, read_csv, MetricRow};
pub use config::{BiasMode, ChannelKind, DopplerKind, ExperimentConfig, SweepAxis};
pub use run::{
    run_experiment, run_point, snapshot, write_experiment, write_manifest, write_snapshot,
    GeometryTable,
};
pub use trial::{
    build_stream, run_trial, run_trial_traced, Scenario, StageTimes, TrialFailure, TrialOutcome,
    TrialResult, TrialTrace, SYNC_BLOCK,
};
