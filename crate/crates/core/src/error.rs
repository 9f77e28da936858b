use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semi-definite: eigenvalue {eigenvalue:e} below {bound:e}")]
    NotPositiveSemidefinite { eigenvalue: f64, bound: f64 },

    #[error("linear system is singular at tolerance")]
    SingularSystem,

    #[error("I - B is singular (|det| = {det:e})")]
    SingularStructure { det: f64 },

    #[error("invalid lambda grid: {0}")]
    InvalidGrid(String),

    #[error("too few observations: {0}")]
    TooFewObservations(String),

    #[error("{folds} folds requested but an environment has only {n} observations")]
    TooManyFolds { folds: usize, n: usize },

    #[error("bootstrap resample has fewer than two observations in an environment")]
    DegenerateResample,

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    /// True for failures that originate in the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveSemidefinite { .. } | Error::SingularSystem | Error::SingularStructure { .. }
        )
    }
}
