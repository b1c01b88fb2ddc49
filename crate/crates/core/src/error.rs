//! Error types shared across the crate.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset must contain at least {min} observations, got {got}")]
    TooFewObservations { min: usize, got: usize },
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("survival rows require y > 0 and status in {{0,1}} (row {row})")]
    InvalidSurvivalRow { row: usize },
    #[error("covariate dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("matrix expected symmetric (max asymmetry {asym:.3e} > {tol:.1e}) in {context}")]
    NotSymmetric {
        asym: f64,
        tol: f64,
        context: &'static str,
    },
    #[error("matrix not positive definite (min eigenvalue {min_eig:.3e}) in {context}")]
    NotPositiveDefinite { min_eig: f64, context: &'static str },
    #[error("singular design matrix")]
    SingularDesign,
    #[error("singular system in {context} (condition number {cond:.3e} exceeds {limit:.1e})")]
    SingularMatrix {
        context: &'static str,
        cond: f64,
        limit: f64,
    },
    #[error("nuisance curvature block is numerically singular (condition number {cond:.3e})")]
    SingularNuisanceBlock { cond: f64 },
    #[error("block matrix A is numerically singular (condition number {cond:.3e})")]
    SingularA { cond: f64 },
    #[error("sandwich Jacobian J is singular")]
    SingularJ,
    #[error("response is constant; regression fit is degenerate")]
    ConstantResponse,
    #[error("both response classes must be present for a logistic fit")]
    OneClassOnly,
    #[error("perfect separation detected in logistic fit (|theta| diverged)")]
    Separation,
    #[error("no events in survival data")]
    NoEvents,
    #[error("covariates are collinear on the risk sets")]
    Collinear,
    #[error("solver failed to converge after {iters} iterations in {context}")]
    NoConvergence { iters: usize, context: &'static str },
    #[error("no root found for the initial pi system")]
    NoRoot,
    #[error("subgroup {index} matches no internal observations")]
    EmptySubgroup { index: usize },
    #[error("zero is outside the convex hull of the constraint rows")]
    HullViolation,
    #[error("finite-difference probe returned a non-finite value")]
    NonFiniteEvaluation,
    #[error("covariance repair failed: eigenvalue {eig:.3e} below -1e-10 * trace")]
    IndefiniteCovariance { eig: f64 },
    #[error("{failed} of {total} replicates failed (limit 5%)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
