use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("malformed bond: {0}")]
    MalformedBond(String),

    #[error("periodic boundaries are only supported at zero flux (got phi = {phi})")]
    PeriodicWithFlux { phi: f64 },

    #[error("eigensolver failed to converge for a {dim}x{dim} matrix")]
    SolverNonConvergence { dim: usize },

    #[error("epsilon states are degenerate with the flat band at phi = {phi} (|eps| = {magnitude:e})")]
    DegenerateAtCrossing { phi: f64, magnitude: f64 },

    #[error("no null vector on the requested support (smallest singular value {smallest:e})")]
    NoNullVector { smallest: f64 },

    #[error("invalid plaquette selection: {0}")]
    InvalidPlaquettes(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("initial state is not in the flat band (projection {projection})")]
    NotFlatBand { projection: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("eigenbases are misaligned (max deviation of overlap from identity {deviation})")]
    MisalignedBasis { deviation: f64 },

    #[error("step-size convergence failure: halving the step changed {quantity} by {change:e} (limit {limit:e})")]
    NotConverged {
        quantity: &'static str,
        change: f64,
        limit: f64,
    },

    #[error("fit did not converge: {0}")]
    FitDivergence(String),

    #[error("numeric invariant violated: {0}")]
    Numeric(String),
}

impl Error {
    /// Machine-readable code for an error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidLattice(_) => "invalid_lattice",
            Error::MalformedBond(_) => "malformed_bond",
            Error::PeriodicWithFlux { .. } => "periodic_with_flux",
            Error::SolverNonConvergence { .. } => "solver_non_convergence",
            Error::DegenerateAtCrossing { .. } => "degenerate_at_crossing",
            Error::NoNullVector { .. } => "no_null_vector",
            Error::InvalidPlaquettes(_) => "invalid_plaquettes",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NotFlatBand { .. } => "not_flat_band",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::MisalignedBasis { .. } => "misaligned_basis",
            Error::NotConverged { .. } => "not_converged",
            Error::FitDivergence(_) => "fit_divergence",
            Error::Numeric(_) => "numeric",
        }
    }

    /// True for failures of a step-size or fit convergence contract.
    pub fn is_convergence(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. } | Error::FitDivergence(_) | Error::SolverNonConvergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
