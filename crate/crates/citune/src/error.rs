//! Crate-wide error type.

use thiserror::Error;

use crate::domain::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("validation failed:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("degenerate workload: {0}")]
    DegenerateWorkload(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("no anomaly detected within the grace window after t={failure_time}")]
    DetectionMiss { failure_time: f64 },

    #[error("anomaly starting at t={start} did not resolve before the metric series ended")]
    UnresolvedAnomaly { start: f64 },

    #[error("capacity {capacity} events/s cannot catch up to input rate {rate} events/s")]
    NoCatchUp { capacity: f64, rate: f64 },

    #[error("degenerate fit: feature '{feature}' is constant or collinear in the training set")]
    DegenerateFit { feature: String },

    #[error("profiling failed: {invalid} of {total} cells invalid, above the {limit_percent}% limit")]
    ProfilingFailed {
        invalid: usize,
        total: usize,
        limit_percent: u32,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// CLI exit code: 2 for input/validation problems, 3 for runtime faults.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_)
            | Error::Invalid(_)
            | Error::DegenerateWorkload(_)
            | Error::InsufficientData { .. } => 2,
            _ => 3,
        }
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("  {}: {}", v.path, v.message))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
