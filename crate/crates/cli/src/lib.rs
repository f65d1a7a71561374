//! Command-line pipeline: ingestion, context building, ranker and model
//! training, generation, perturbation and evaluation.

pub mod app;
pub mod config;
pub mod pipeline;

use geoknow_model::ModelError;

/// Bad flags or configuration; exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// 1 for usage errors, 3 for numeric failures, 2 for everything else (bad
/// or missing data).
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        match cause.downcast_ref::<ModelError>() {
            Some(ModelError::Numeric(_)) => return 3,
            Some(ModelError::Config(_)) => return 1,
            _ => {}
        }
    }
    2
}
