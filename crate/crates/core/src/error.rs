use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("custom projector returned a point outside the set (violation {violation:.3e})")]
    InfeasibleProjection { violation: f64 },

    #[error("state became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("invalid certificate: L^2 + alpha^2 - 2 alpha beta = {discriminant} < 0")]
    InvalidCertificate { discriminant: f64 },

    #[error("stability condition rho + mu < beta violated (rho + mu = {lhs}, beta = {beta})")]
    ConditionViolated { lhs: f64, beta: f64 },

    #[error("fixed-time exponents (r1 = {r1}, r2 = {r2}) do not match nu = {nu}")]
    ExponentMismatch { r1: f64, r2: f64, nu: f64 },

    #[error("no path from node {origin} to node {destination}")]
    UnreachableDestination { origin: String, destination: String },

    #[error("user equilibrium did not converge: relative gap {gap:.3e} after {iterations} iterations")]
    NonConvergence { gap: f64, iterations: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
