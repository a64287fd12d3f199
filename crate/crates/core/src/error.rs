//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("site index {site} out of range for {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },

    #[error("coincident sites {i} and {j} (zero separation)")]
    CoincidentSites { i: usize, j: usize },

    #[error("field direction must have unit norm, got |v| = {norm}")]
    FieldNotUnit { norm: f64 },

    #[error("operator dimensions differ: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },

    #[error("operator is not Hermitian (max deviation {max_dev:.3e})")]
    NonHermitian { max_dev: f64 },

    #[error("zero denominator in normalized overlap")]
    ZeroDenominator,

    #[error("observable has zero norm")]
    ZeroObservable,

    #[error("{what} = {value} outside domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("time {requested:.6e} s is not a multiple of the block grid {grid:.6e} s")]
    NonStroboscopic { requested: f64, grid: f64 },

    #[error("time grid is empty")]
    EmptyGrid,

    #[error("curve grids differ and interpolation is disabled")]
    GridMismatch,

    #[error("need at least {needed} data points for {params} parameters, got {got}")]
    TooFewPoints {
        needed: usize,
        got: usize,
        params: usize,
    },

    #[error("singular Jacobian in least-squares solve")]
    SingularJacobian,

    #[error("degenerate abscissae: all x values identical")]
    DegenerateAbscissae,

    #[error("propagator is action-only at this dimension; dense matrix unavailable")]
    ActionOnly,

    #[error("{op} requires dense operator storage")]
    DenseRequired { op: &'static str },

    #[error("linear algebra backend error: {0}")]
    Linalg(String),
}
