use std::path::PathBuf;

use thiserror::Error;

use crate::vasc_model::VesselId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    /// A configuration value violates a model invariant.
    #[error("invalid `{field}` on vessel {vessel}: {reason}")]
    Invalid {
        vessel: VesselId,
        field: &'static str,
        reason: String,
    },

    #[error("invalid network: {0}")]
    Topology(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A random draw produced a non-physical parameter value.
    #[error("sample {sample} rejected: {parameter} = {value} is non-physical")]
    Rejected { sample: usize, parameter: String, value: f64 },

    #[error("CFL violation: dt = {dt:e} exceeds limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("negative or non-finite area in vessel {vessel} at node {node}, t = {time}")]
    NegativeArea { vessel: VesselId, node: usize, time: f64 },

    #[error("{location}: Newton solve did not converge after {iterations} iterations (residual {residual:e})")]
    Newton {
        location: String,
        iterations: usize,
        residual: f64,
    },

    #[error("periodicity not reached after {} cycles; residual history {history:?}", history.len())]
    Periodicity { history: Vec<f64> },

    #[error("ensemble sample {index} failed ({parameters}): {source}")]
    Sample {
        index: usize,
        parameters: String,
        #[source]
        source: Box<Error>,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("format error in {artifact}: {reason}")]
    Format { artifact: String, reason: String },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn format(artifact: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            artifact: artifact.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 input, 3 numerical/convergence, 4 invariant.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::NotFound(_)
            | Error::Io { .. }
            | Error::Parse(_)
            | Error::Invalid { .. }
            | Error::Topology(_)
            | Error::Domain(_)
            | Error::Format { .. } => 2,
            Error::Rejected { .. }
            | Error::Cfl { .. }
            | Error::NegativeArea { .. }
            | Error::Newton { .. }
            | Error::Periodicity { .. }
            | Error::Numerical(_) => 3,
            Error::Sample { source, .. } => source.exit_code(),
            Error::Invariant(_) => 4,
        }
    }
}
