//! Time-periodic solutions of one-dimensional quasilinear hyperbolic
//! systems `u_t + A(u) u_x = F(u)` on `[0, L]` driven by periodic boundary
//! forcing, and their stability under the initial-boundary value problem.
//!
//! The pipeline: describe the system ([`SystemSpec`]) and boundary data
//! ([`BoundarySpec`]), check the hypotheses, run the fixed-point iteration
//! ([`solve_periodic`]) and compare forward evolutions against the result
//! ([`ivp::run`], [`ivp::stability_metrics`]).

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod boundary;
pub mod builtins;
pub mod characteristics;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod fit;
pub mod ivp;
pub mod periodic;
pub mod sampling;
pub mod system;

pub use boundary::{
    eval_boundary, minimal_characterizing_number, theta_matrix, validate_forcing, BoundaryMap, BoundarySpec,
    ForcingReport, Harmonic, Harmonics, Side, Signal, ThetaData,
};
pub use characteristics::{trace_characteristic, CharacteristicTrace};
pub use diagnostics::{
    emit_report, norms, pde_residual, regularity_measurements, smallness_certificate, weights, Certificate, Format,
    Norms, RegularityReport, Report, WeightProfile,
};
pub use error::{Error, Result};
pub use field::Field;
pub use fit::RateFit;
pub use ivp::{IvpState, StabilityReport, Trajectory};
pub use periodic::{
    extract_initial_data, fit_contraction_rate, linearized_step, solve_periodic, IterationConfig, IterationReport,
};
pub use system::{
    coupling_b, eigen_decompose, g_nonlinear, gtilde_matrix, minimal_k, rescale_time, validate_hyperbolicity,
    EigenStructure, HyperbolicityReport, SourceLinearization, SystemSpec,
};
