use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Complex, zero, or repeated eigenvalue: the system is not strictly hyperbolic.
    #[error("hyperbolicity violated: {0}")]
    Hyperbolicity(String),

    #[error("eigenvalue signature mismatch: expected {expected_negative} negative of {n}, found {found_negative}")]
    Signature { n: usize, expected_negative: usize, found_negative: usize },

    #[error("source term does not vanish at the origin: |F(0)| = {0:e}")]
    SourceOrigin(f64),

    #[error("degenerate eigenbasis: l_{{{index},{index}}} = {value:e}")]
    DegenerateEigenbasis { index: usize, value: f64 },

    #[error("diagonal dominance fails for family {family} (K = {k})")]
    Dominance { family: usize, k: f64 },

    #[error("state left the admissible neighbourhood: |u| = {norm:e} > {radius:e}")]
    Domain { norm: f64, radius: f64 },

    #[error("boundary map error: {0}")]
    BoundaryMap(String),

    #[error("forcing signal {index} is not periodic: residual {residual:e}")]
    Periodicity { index: usize, residual: f64 },

    #[error("no convergence after {0} iterations")]
    Convergence(usize),

    #[error("fixed-point iteration is not contracting (last deltas {0:?})")]
    NonContraction(Vec<f64>),

    #[error("time step {dt:e} exceeds stability limit {limit:e}")]
    StepSize { dt: f64, limit: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
