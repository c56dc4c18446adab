//! Synthetic datasets, client splits, the accuracy metric, centralised and
//! federated experiments, and CSV reports.

mod config;
mod data;
mod experiment;
mod report;

use thiserror::Error;

use crate::explorer::ExploreError;
use crate::fedproto::ProtoError;
use crate::neuralnet::NnError;

pub use config::{parse_run_config, RunConfig, TransportKind};
pub use data::{
    exhaustive_budget, extract_graphs, family_specs, gen_programs, gen_synthetic_dataset, pool_vocabulary,
    read_dataset, split_dataset, write_dataset, DatasetSplit, LabelledGraph, SplitScheme, SyntheticFamilySpec,
    SyntheticProgram, DEFAULT_NOISE, MOTIF_NAMES, SYSCALL_POOL,
};
pub use experiment::{
    evaluate, generate_graphs, write_csv, ClientModel, Evaluation, run_centralized, run_federated, to_examples, train_epochs, Experiment,
    ExperimentConfig, FederatedOutcome, RoundReport, BASELINE_CLIENT, CSV_HEADER,
};
pub use report::{parse_csv, report, summarize, ClientCurve, CsvRow, Summary};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no labels to score")]
    EmptyInput,
    #[error("{left} labels against {right} predictions")]
    LengthMismatch { left: usize, right: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Proto(#[from] ProtoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Fraction of positions where `y` and `y_hat` agree.
pub fn accuracy(y: &[usize], y_hat: &[usize]) -> Result<f64, HarnessError> {
    if y.len() != y_hat.len() {
        return Err(HarnessError::LengthMismatch {
            left: y.len(),
            right: y_hat.len(),
        });
    }
    if y.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let hits = y.iter().zip(y_hat).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y.len() as f64)
}
