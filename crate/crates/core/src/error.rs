use thiserror::Error;

use crate::reduced_form::ReducedForm;

/// Errors raised across the crate. Variants map one-to-one to the
/// failure modes of the individual operations.
#[derive(Debug, Error)]
pub enum HsvarError {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("inverse-Wishart degrees of freedom {dof} must exceed n + 1 = {min}")]
    DofTooSmall { dof: f64, min: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("regressor cross-product is singular")]
    SingularRegressors,
    #[error("GLS weighting matrix is singular")]
    SingularWeighting,
    #[error("ML iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize, last: Box<ReducedForm>, trace: Vec<f64> },
    #[error("VAR is not stable (companion spectral radius {radius:.6})")]
    UnstableVar { radius: f64 },
    #[error("invalid regime: {0}")]
    InvalidRegime(String),
    #[error("posterior covariance of the slope coefficients is singular")]
    SingularPosteriorCovariance,

    #[error("dimension {n} too large (limit {limit})")]
    DimensionTooLarge { n: usize, limit: usize },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("restrictions are redundant or inconsistent for shock {shock}")]
    RedundantRestrictions { shock: usize },

    #[error("regime {regime} too short for kurtosis estimation ({len} observations)")]
    RegimeTooShort { regime: usize, len: usize },
    #[error("degenerate moments in regime {regime}, variable {variable}")]
    DegenerateMoments { regime: usize, variable: usize },
    #[error("invalid test range s = {s}, r = {r} for n = {n}")]
    InvalidRange { s: usize, r: usize, n: usize },

    #[error("restriction horizon {horizon} exceeds available horizon {max}")]
    HorizonExceeded { horizon: usize, max: usize },
    #[error("index out of bounds: {0}")]
    IndexOutOfBounds(String),

    #[error("projection residual fell below tolerance")]
    ProjectionDegenerate,
    #[error("no feasible starting point for the bound optimizer")]
    NoFeasibleStart,
    #[error("every stochastic draw was empty")]
    AllDrawsEmpty,
    #[error("acceptance too low: {accepted} accepted out of {total} posterior draws")]
    AcceptanceTooLow { accepted: usize, total: usize },

    #[error("covariance pattern does not match the requested case")]
    CaseMismatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl HsvarError {
    /// True for failures that stem from invalid inputs rather than from
    /// numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HsvarError::DimensionMismatch(_)
                | HsvarError::InvalidConfig(_)
                | HsvarError::InvalidRegime(_)
                | HsvarError::DimensionTooLarge { .. }
                | HsvarError::InvalidPartition(_)
                | HsvarError::InvalidRange { .. }
                | HsvarError::HorizonExceeded { .. }
                | HsvarError::IndexOutOfBounds(_)
                | HsvarError::DofTooSmall { .. }
                | HsvarError::CaseMismatch
        )
    }
}

pub type Result<T> = std::result::Result<T, HsvarError>;
