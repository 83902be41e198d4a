use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("all responsibilities are zero; cannot estimate a component")]
    DegenerateResponsibility,

    #[error("state {state} is empty (posterior mass {mass:e})")]
    EmptyState { state: usize, mass: f64 },

    #[error("transition matrix is not irreducible and aperiodic")]
    Structure,

    #[error("need at least {needed} observations, got {found}")]
    Size { needed: usize, found: usize },

    #[error("invalid index: {0}")]
    Index(String),
}

pub type Result<T> = core::result::Result<T, Error>;
