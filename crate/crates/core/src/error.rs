use thiserror::Error;

/// Errors raised by model construction, sampling, filtering and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model, configuration or data file failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// All particle weights vanished at the given (1-based) time step.
    #[error("particle degeneracy at step {step}: every particle weight is zero")]
    ParticleDegeneracy { step: usize },

    /// The objective or log-posterior is not finite where it has to be.
    #[error("non-finite objective: {0}")]
    NonFinite(String),

    /// Exhaustive enumeration would exceed the configured state budget.
    #[error("enumeration needs about {estimate} configurations, budget is {budget}")]
    EnumerationBudget { estimate: u128, budget: u128 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ParticleDegeneracy { .. } | Error::NonFinite(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
