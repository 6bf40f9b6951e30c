use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("operator is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stability guard violated: dt * max|H| = {0:.4} exceeds 0.1")]
    StabilityGuard(f64),

    #[error("state is not stationary under its Hamiltonian (commutator norm {0:.3e})")]
    NonStationary(f64),

    #[error("flow is not stationary: fit residual {residual:.3e} exceeds 10% of slope {slope:.3e}")]
    FlowResidual { slope: f64, residual: f64 },

    #[error("extrapolation did not converge: relative spread {0:.3e} exceeds 5%")]
    NonConvergent(f64),

    #[error("zero-probability state {0} receives a nonzero logarithmic weight")]
    ZeroProbability(usize),

    #[error("dominant eigenvalue is degenerate: {0} and {1}")]
    DegenerateDominant(String, String),

    #[error("window {window:.3e} too short for long-time form: gap * window = {product:.3e}")]
    GapTooSmall { window: f64, product: f64 },

    #[error("sign cross-check failed: {0}")]
    SignCheck(String),

    #[error("invalid contraction pattern: {0}")]
    InvalidPattern(String),

    #[error("null space of the generator has dimension {0}, expected 1")]
    DegenerateNullSpace(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
