use thiserror::Error;

use crate::policy::PolicyKind;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("invalid associativity {assoc} for {kind}: {reason}")]
    InvalidAssociativity {
        kind: PolicyKind,
        assoc: usize,
        reason: &'static str,
    },

    #[error("state space of {size} control states exceeds the cap of {cap}")]
    StateSpaceTooLarge { size: u128, cap: u128 },

    #[error("search exceeded its cap of {cap} simulated steps")]
    SearchCapExceeded { cap: u64 },

    #[error("malformed cache-set state: {0}")]
    MalformedState(String),

    #[error("invalid content: {0}")]
    InvalidContent(String),

    #[error("refill precondition violated: {0}")]
    Refill(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("cannot parse control state {input:?}: {reason}")]
    ParseControl { input: String, reason: String },

    #[error("oracle behavior is inconsistent with every candidate state")]
    OracleMismatch,

    #[error("state identification gave up after {0} queries")]
    QueryBudgetExhausted(usize),

    #[error("invalid attack scenario: {0}")]
    InvalidScenario(String),

    #[error("output failed: {0}")]
    Io(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
