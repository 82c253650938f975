use thiserror::Error;

use crate::kernel::PortRef;
use crate::rng::RngError;
use crate::time::SimTime;

/// Failure raised by a model hook (transition, output, global transition).
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Rng(#[from] RngError),
    #[error("{0}")]
    Invalid(String),
}

/// Failure of a downward information query.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("unknown macro property {0}")]
    UnknownProperty(String),
    #[error("model has no macro-level parent to query")]
    NoMacro,
    #[error("macro-level hooks are disabled for this simulation")]
    Disabled,
    #[error("macro property {property} is undefined: {reason}")]
    Undefined { property: String, reason: String },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("illegitimate time advance {ta} for model {model} at t={time}")]
    Legitimacy { model: String, time: SimTime, ta: f64 },
    #[error("routing error: {0}")]
    Routing(String),
    #[error("coupling error: {0}")]
    Coupling(String),
    #[error("structure error: {0}")]
    Structure(String),
    #[error("model {model} failed at t={time}: {source}")]
    Model {
        model: String,
        time: SimTime,
        #[source]
        source: ModelError,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl SimError {
    pub(crate) fn coupling(from: PortRef, to: PortRef, why: &str) -> Self {
        SimError::Coupling(format!("{from} -> {to}: {why}"))
    }
}

pub type HookResult = Result<(), ModelError>;
