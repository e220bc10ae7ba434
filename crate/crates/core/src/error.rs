use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A raw input failed validation; `field` names the offending parameter.
    #[error("invalid {field}: {message}")]
    Validation { field: &'static str, message: String },

    /// The operation needs subcritical parameters.
    #[error("parameters are not subcritical: {0}")]
    Regime(String),

    /// Root finding or another numerical procedure failed.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Argument outside the domain of a formula.
    #[error("argument out of domain: {0}")]
    Domain(String),

    /// The caller violated a documented precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// The displacement intensity has infinite mass on the requested window.
    #[error("intensity has infinite mass on {0}")]
    InfiniteMass(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    /// The decoupling thinning cannot reach the requested probability.
    #[error("infeasible decoupling: {0}")]
    Infeasible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(field: &'static str, message: impl Into<String>) -> Self {
        Error::Validation {
            field,
            message: message.into(),
        }
    }

    /// Whether the failure is numerical (root finding, calibration) rather than
    /// a usage or configuration problem.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::Calibration(_) | Error::Infeasible(_)
        )
    }
}
