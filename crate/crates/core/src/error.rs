use std::fmt;

use serde::Serialize;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value passed as {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("history too short for {what}: need {needed} samples, got {got}")]
    ShortHistory {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error(
        "{name} polynomial {coeffs:?} is not strictly minimum phase \
         (smallest root magnitude in q^-1 is {root_magnitude:.6})"
    )]
    NotMinimumPhase {
        name: &'static str,
        coeffs: Vec<f64>,
        root_magnitude: f64,
    },

    #[error("(A, C) is not observable: observability rank {rank} < {dim}")]
    NotObservable { rank: usize, dim: usize },

    #[error("Riccati iteration did not converge within {0} iterations")]
    RiccatiNoConvergence(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("replay record length {record_len} exceeds the {available} honest samples available at onset")]
    ReplayHistory { record_len: usize, available: usize },

    #[error("unknown custom attack {0:?}")]
    UnknownCustomAttack(String),

    #[error("singular sample covariance: window of {len} samples in dimension {dim}")]
    SingularCovariance { len: usize, dim: usize },

    #[error("calibration needs n_cal >= {needed} windows for alpha = {alpha}, got {got}")]
    CalibrationTooSmall { alpha: f64, needed: usize, got: usize },

    #[error("missing ground truth: {0}")]
    MissingGroundTruth(&'static str),

    #[error("trace format: {0}")]
    TraceFormat(String),

    #[error("scenario parse error: {0}")]
    ScenarioParse(String),

    #[error("{0}")]
    Validation(ValidationError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category, used by the CLI error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonFinite(_) => "non_finite",
            Error::Dimension(_) => "dimension",
            Error::ShortHistory { .. } => "short_history",
            Error::NotMinimumPhase { .. } => "not_minimum_phase",
            Error::NotObservable { .. } => "not_observable",
            Error::RiccatiNoConvergence(_) => "riccati_no_convergence",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::ReplayHistory { .. } => "replay_history",
            Error::UnknownCustomAttack(_) => "unknown_custom_attack",
            Error::SingularCovariance { .. } => "singular_covariance",
            Error::CalibrationTooSmall { .. } => "calibration_too_small",
            Error::MissingGroundTruth(_) => "missing_ground_truth",
            Error::TraceFormat(_) => "trace_format",
            Error::ScenarioParse(_) => "scenario_parse",
            Error::Validation(_) => "validation",
            Error::Io(_) => "io",
        }
    }
}

/// One offending field of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

/// Every problem found while validating a scenario, not just the first.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationError {
    pub issues: Vec<FieldIssue>,
}

impl ValidationError {
    pub fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.issues.push(FieldIssue {
            field: field.into(),
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid scenario:")?;
        for (i, issue) in self.issues.iter().enumerate() {
            let sep = if i == 0 { " " } else { "; " };
            write!(f, "{sep}{}: {}", issue.field, issue.message)?;
        }
        Ok(())
    }
}

pub(crate) fn ensure_finite(value: f64, what: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn ensure_all_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
