use quickdetect::anomaly::{AnomalyError, TraceError};
use quickdetect::asymptotics::AsymptoticsError;
use quickdetect::design::DesignError;
use quickdetect::detectors::DetectorError;
use quickdetect::model::ModelError;
use quickdetect::oc_solver::SolverError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    /// Already printed; exit with this code.
    #[error("exit {0}")]
    Reported(u8),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Input(_) => 3,
            Self::Numerical(_) => 4,
            Self::Reported(c) => *c,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Model(m) => m.into(),
            SolverError::NonConvergence { .. } | SolverError::Singular(_) => Self::Numerical(e.to_string()),
            SolverError::InvalidGrid(_) | SolverError::InvalidArgument(_) => Self::Input(e.to_string()),
        }
    }
}

impl From<DesignError> for CliError {
    fn from(e: DesignError) -> Self {
        match e {
            DesignError::Solver(s) => s.into(),
            DesignError::Bracket { .. } | DesignError::NoConvergence(_) => Self::Numerical(e.to_string()),
            DesignError::InvalidArgument(_) | DesignError::Inconsistent(_) => Self::Input(e.to_string()),
        }
    }
}

impl From<AsymptoticsError> for CliError {
    fn from(e: AsymptoticsError) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<DetectorError> for CliError {
    fn from(e: DetectorError) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<AnomalyError> for CliError {
    fn from(e: AnomalyError) -> Self {
        match e {
            AnomalyError::Trace(t) => t.into(),
            AnomalyError::Design(d) => d.into(),
            AnomalyError::Solver(s) => s.into(),
            AnomalyError::Detector(d) => d.into(),
        }
    }
}
