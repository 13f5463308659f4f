//! End-to-end orchestration, configuration and cost estimation.

pub mod config;
pub mod cost;
pub mod run;

pub use config::{ConfigError, PipelineConfig, ProviderSettings, DEFAULT_BANDIT_ROUNDS};
pub use cost::{estimate_cost, CostError, Prices};
pub use run::{
    annotate_corpus, build_providers, load_corpus, process_object, run_pipeline, selection_experiment,
    AnnotateOutput, AnnotationRecord, ObjectFailure, PipelineError, RunResult, RunSummary, SelectionTrial,
    StageTimings,
};
