//! Log-linear rate fits.

use serde::{Deserialize, Serialize};

/// Outcome of fitting a geometric rate to a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum RateFit {
    Rate(f64),
    /// Every sample sits at the noise floor.
    ConvergedImmediately,
    /// Fewer than four usable samples.
    Insufficient,
}

impl RateFit {
    pub fn rate(&self) -> Option<f64> {
        match self {
            RateFit::Rate(r) => Some(*r),
            _ => None,
        }
    }
}

/// Least-squares slope of `y` against `x`. `None` for fewer than two points
/// or a degenerate abscissa.
pub fn log_linear_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    Some(sxy / sxx)
}
