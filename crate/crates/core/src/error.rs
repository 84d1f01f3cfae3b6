use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("integration blew up at t = {time:e} s: component `{component}` is {value}")]
    IntegrationBlowup {
        time: f64,
        component: String,
        value: f64,
    },

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("value {value} outside activation domain [0, {max}]")]
    Domain { value: f64, max: f64 },

    #[error("invalid activation coefficients: {0}")]
    Coefficients(String),

    #[error("activation derivative is singular at P_in = {0}")]
    Singularity(f64),

    #[error("curve has no rising region (max/floor = {ratio:.3})")]
    NoThreshold { ratio: f64 },

    #[error("fit failed after {restarts} restarts, best rmse = {best_rmse:e}")]
    FitFailure { restarts: usize, best_rmse: f64 },

    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged { epoch: usize, reason: String },

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("transfer extraction failed at P_in = {p_in} mW: {source}")]
    AtInput {
        p_in: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NumericalDomain(_) => "numerical-domain",
            Error::IntegrationBlowup { .. } => "integration-blowup",
            Error::Convergence(_) => "convergence",
            Error::Parameter(_) => "parameter",
            Error::Precondition(_) => "precondition",
            Error::Domain { .. } => "domain",
            Error::Coefficients(_) => "coefficients",
            Error::Singularity(_) => "singularity",
            Error::NoThreshold { .. } => "no-threshold",
            Error::FitFailure { .. } => "fit-failure",
            Error::TrainingDiverged { .. } => "training-diverged",
            Error::Dependency(_) => "dependency",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::AtInput { source, .. } => source.kind(),
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
