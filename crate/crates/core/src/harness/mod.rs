//! Configuration, end-to-end pipeline and the stage commands behind the CLI.

mod commands;
mod config;
mod pipeline;

pub use commands::*;
pub use config::RunConfig;
pub use pipeline::{
    build_metrics, combine_spent, mechanism_request, plan_budget, run_pipeline, sweep, train_config, train_stage,
    BudgetPlan, Metrics, PipelineRun, SweepRow, COMPOSITION_RULE, SWEEP_HEADER,
};
