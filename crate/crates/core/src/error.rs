use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("density {min:.6e} fell below the vacuum bound rho_* = {rho_star:.6e}")]
    VacuumProximity { min: f64, rho_star: f64 },

    #[error("invalid viscosity law: {0}")]
    InvalidViscosity(String),

    #[error("quadrature for g(rho) did not converge at rho = {0}")]
    Quadrature(f64),

    #[error("elliptic coefficient {min:.6e} is below the ellipticity bound {bound:.6e}")]
    CoefficientBelowBound { min: f64, bound: f64 },

    #[error("elliptic solve did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    EllipticNonConvergence { iterations: usize, residual: f64, history: Vec<f64> },

    #[error("time step {dt:.3e} exceeds the CFL limit {limit:.3e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index {index} outside the valid range {lo}..={hi}")]
    OutOfRange { index: i64, lo: i64, hi: i64 },

    #[error("dyadic block {0} is identically zero")]
    ZeroBlock(i64),

    #[error("time series are ragged or non-uniform: {0}")]
    RaggedSeries(String),

    #[error("snapshot format: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
