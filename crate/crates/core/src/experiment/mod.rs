//! Experiment driver: per fold it builds the data, trains the classifier,
//! runs each explainer and scores the maps, then writes per-fold and
//! aggregated CSV tables and SVG charts.
//!
//! Configuration is TOML with the sections `[dataset]`, `[model]`,
//! `[explainers.*]`, `[metrics]` and `[run]`.

pub mod checks;
mod config;
mod report;
mod run;
pub mod svg;

use std::path::{Path, PathBuf};

pub use config::{
    lambda_method_name, Ablation, CsvSource, DatasetSection, ExperimentConfig, ExperimentKind, ExplainersSection, Method,
    MethodKind, MetricsSection, Profile, RunSection, LAMBDA_GRID,
};
pub use report::{render, report, Report};
pub use run::{
    aggregate, classifier_auroc, evaluate_maps, fold_data, fold_model_config, load_csv_source, results_file, run_experiment, run_method,
    summary_file, ImportanceRow, RunOutput, CLASSIFIER, CONFIG_FILE, IMPORTANCE_FILE,
};

use crate::datagen::DataError;
use crate::explainers::ExplainerError;
use crate::metrics::MetricsError;
use crate::nets::NetError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("output directory {0} is not empty; pass --force to write into it")]
    OutputExists(PathBuf),
    #[error("fold {fold} failed at stage '{stage}': {message} (partial results written to {dir})")]
    Stage {
        fold: usize,
        stage: String,
        message: String,
        dir: PathBuf,
    },
    #[error("{dir} is missing {}", .missing.join(", "))]
    MissingFiles { dir: PathBuf, missing: Vec<String> },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Explainer(#[from] ExplainerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> ExperimentError {
    ExperimentError::Io(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests;
