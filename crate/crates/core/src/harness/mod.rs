//! Scenario files, experiment orchestration and report output.

mod compare;
mod pipeline;
mod plot;
mod scenario;

pub use compare::{
    check_pair, compare, compare_row, improvement, pair_paths, ComparisonReport, ComparisonRow,
    VariantStats,
};
pub use pipeline::{
    execute, output_dir, plan_scenario, prepare, run_scenario, trial_setup, write_artifacts,
    write_plan, Execution, PlanOutput, PlanReport, Prepared, RunOptions, RunSummary,
    SCHEMA_VERSION,
};
pub use plot::{downsample, emit_plot_data};
pub use scenario::{
    FaultSpec, HoverSpec, LayoutSpec, OutputSpec, PlannedSpec, PlannerMode, ReferenceSpec,
    RotorFault, Scenario, SpiralSpec, UnitBlock,
};

use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

use crate::planner::PlannerError;
use crate::sim::SimError;
use crate::trajopt::TrajError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("planner failed: {0}")]
    Planner(#[from] PlannerError),
    #[error("trajectory optimization failed: {0}")]
    Trajectory(#[from] TrajError),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// 3 for planning failures, 4 for bad configuration, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Sim(SimError::Config(_)) => 4,
            HarnessError::Planner(PlannerError::Map(_) | PlannerError::Spec(_) | PlannerError::Config(_)) => 4,
            HarnessError::Planner(_) | HarnessError::Trajectory(_) => 3,
            _ => 1,
        }
    }
}

/// Per-file outcome of a batch run.
pub type BatchResult = Vec<(PathBuf, Result<RunSummary, HarnessError>)>;

/// Runs every `*.toml` scenario in `dir` in parallel, in file-name order.
pub fn batch(dir: &std::path::Path, opts: &RunOptions) -> Result<BatchResult, HarnessError> {
    let files = compare::toml_files(dir)?;
    if files.is_empty() {
        return Err(HarnessError::Config(format!("no scenario files in {}", dir.display())));
    }
    Ok(files
        .into_par_iter()
        .map(|p| {
            let r = run_scenario(&p, opts);
            (p, r)
        })
        .collect())
}
