use thiserror::Error;

use crate::plant::PlantState;
use crate::ussf::UssfError;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("integration fault at t = {t}: state became non-finite")]
    Integration { t: f64, last_good: PlantState },
    #[error("controller fault at t = {t}: non-finite {term}")]
    Controller { t: f64, term: &'static str },
    #[error("observer fault at t = {t}: non-finite {term}")]
    Observer { t: f64, term: &'static str },
    #[error(transparent)]
    Ussf(#[from] UssfError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SimError::Validation(msg.into())
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Validation(_) | SimError::Ussf(_) | SimError::Json(_) => 1,
            SimError::Integration { .. }
            | SimError::Controller { .. }
            | SimError::Observer { .. }
            | SimError::Io(_) => 2,
        }
    }

    pub fn is_fault(&self) -> bool {
        matches!(
            self,
            SimError::Integration { .. } | SimError::Controller { .. } | SimError::Observer { .. }
        )
    }
}
