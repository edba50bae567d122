//! Boundary maps `G_r`, `G_s`, the periodic forcing signals `h_i`, and the
//! dissipativity number `θ` of the linearized boundary coupling.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::to_rows;

pub const FORCING_SAMPLES: usize = 4096;
pub const PERIODICITY_TOL: f64 = 1e-8;
const FD_STEP: f64 = 1e-6;

/// A scalar forcing signal of time.
pub trait Signal: Send + Sync {
    fn value(&self, t: f64) -> f64;

    fn derivative(&self, _t: f64) -> Option<f64> {
        None
    }

    fn second_derivative(&self, _t: f64) -> Option<f64> {
        None
    }
}

/// One term `amplitude · sin(2π·harmonic·t/period + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub amplitude: f64,
    pub harmonic: u32,
    pub phase: f64,
}

/// A finite sine series with a common base period.
#[derive(Clone, Debug, PartialEq)]
pub struct Harmonics {
    pub period: f64,
    pub terms: Vec<Harmonic>,
}

impl Harmonics {
    pub fn zero(period: f64) -> Self {
        Self { period, terms: Vec::new() }
    }

    pub fn sine(amplitude: f64, period: f64) -> Self {
        Self { period, terms: vec![Harmonic { amplitude, harmonic: 1, phase: 0.0 }] }
    }

    fn omega(&self, h: &Harmonic) -> f64 {
        TAU * h.harmonic as f64 / self.period
    }
}

impl Signal for Harmonics {
    fn value(&self, t: f64) -> f64 {
        self.terms.iter().map(|h| h.amplitude * (self.omega(h) * t + h.phase).sin()).sum()
    }

    fn derivative(&self, t: f64) -> Option<f64> {
        Some(
            self.terms
                .iter()
                .map(|h| {
                    let w = self.omega(h);
                    h.amplitude * w * (w * t + h.phase).cos()
                })
                .sum(),
        )
    }

    fn second_derivative(&self, t: f64) -> Option<f64> {
        Some(
            self.terms
                .iter()
                .map(|h| {
                    let w = self.omega(h);
                    -h.amplitude * w * w * (w * t + h.phase).sin()
                })
                .sum(),
        )
    }
}

/// Adapts a plain closure; derivatives are estimated numerically.
pub struct FnSignal<F>(pub F);

impl<F> Signal for FnSignal<F>
where
    F: Fn(f64) -> f64 + Send + Sync,
{
    fn value(&self, t: f64) -> f64 {
        (self.0)(t)
    }
}

/// `factor · inner(sigma · t)`.
struct Transformed {
    inner: Arc<dyn Signal>,
    factor: f64,
    sigma: f64,
}

impl Signal for Transformed {
    fn value(&self, t: f64) -> f64 {
        self.factor * self.inner.value(self.sigma * t)
    }

    fn derivative(&self, t: f64) -> Option<f64> {
        self.inner.derivative(self.sigma * t).map(|d| self.factor * self.sigma * d)
    }

    fn second_derivative(&self, t: f64) -> Option<f64> {
        self.inner.second_derivative(self.sigma * t).map(|d| self.factor * self.sigma * self.sigma * d)
    }
}

pub type MapFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// One incoming-component boundary map `(h, outgoing) -> u_incoming`.
#[derive(Clone)]
pub struct BoundaryMap {
    map: MapFn,
    /// Analytic `(∂G/∂h, ∂G/∂u)` at the origin, overriding finite differences.
    linearization: Option<(f64, Vec<f64>)>,
}

impl BoundaryMap {
    pub fn new<G>(map: G) -> Self
    where
        G: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { map: Arc::new(map), linearization: None }
    }

    /// `G(h, u) = h + Σ gains_j u_j`, with its exact linearization attached.
    pub fn linear(gains: Vec<f64>) -> Self {
        let g = gains.clone();
        Self {
            map: Arc::new(move |h, u| h + g.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()),
            linearization: Some((1.0, gains)),
        }
    }

    pub fn with_linearization(mut self, dg_dh: f64, dg_du: Vec<f64>) -> Self {
        self.linearization = Some((dg_dh, dg_du));
        self
    }

    pub fn eval(&self, h: f64, outgoing: &[f64]) -> f64 {
        (self.map)(h, outgoing)
    }

    /// `(∂G/∂h, ∇_u G)` at the origin.
    pub fn linearize(&self, arity: usize) -> Result<(f64, Vec<f64>)> {
        if let Some(lin) = &self.linearization {
            return Ok(lin.clone());
        }
        let zeros = vec![0.0; arity];
        let dh = (self.eval(FD_STEP, &zeros) - self.eval(-FD_STEP, &zeros)) / (2.0 * FD_STEP);
        let mut du = Vec::with_capacity(arity);
        let mut x = zeros.clone();
        for j in 0..arity {
            x[j] = FD_STEP;
            let p = self.eval(0.0, &x);
            x[j] = -FD_STEP;
            let q = self.eval(0.0, &x);
            x[j] = 0.0;
            du.push((p - q) / (2.0 * FD_STEP));
        }
        if !dh.is_finite() || du.iter().any(|v| !v.is_finite()) {
            return Err(Error::BoundaryMap("non-finite derivative at the origin".into()));
        }
        Ok((dh, du))
    }

    /// `G̃(h̃, u) = G(h̃ / factor, u)`, the map seen by rescaled forcing `h̃ = factor·h`.
    fn forcing_rescaled(&self, factor: f64) -> Self {
        let inner = self.map.clone();
        Self {
            map: Arc::new(move |h, u| inner(h / factor, u)),
            linearization: self.linearization.as_ref().map(|(dh, du)| (dh / factor, du.clone())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Boundary data for `x = 0` (maps for `s = m+1..n`) and `x = L`
/// (maps for `r = 1..m`) together with the `n` forcing signals.
#[derive(Clone)]
pub struct BoundarySpec {
    pub n: usize,
    pub m: usize,
    left: Vec<BoundaryMap>,
    right: Vec<BoundaryMap>,
    signals: Vec<Arc<dyn Signal>>,
    pub period: f64,
    pub h_c1_bound: f64,
    pub h_second_deriv_bound: Option<f64>,
}

impl fmt::Debug for BoundarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundarySpec")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("period", &self.period)
            .field("h_c1_bound", &self.h_c1_bound)
            .field("h_second_deriv_bound", &self.h_second_deriv_bound)
            .finish()
    }
}

impl BoundarySpec {
    pub fn new(
        n: usize,
        m: usize,
        left: Vec<BoundaryMap>,
        right: Vec<BoundaryMap>,
        signals: Vec<Arc<dyn Signal>>,
        period: f64,
    ) -> Result<Self> {
        if m > n || left.len() != n - m || right.len() != m || signals.len() != n {
            return Err(Error::InvalidArgument(format!(
                "boundary shape mismatch: n={n}, m={m}, {} left maps, {} right maps, {} signals",
                left.len(),
                right.len(),
                signals.len()
            )));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidArgument(format!("period must be positive, got {period}")));
        }
        let mut spec = Self { n, m, left, right, signals, period, h_c1_bound: 0.0, h_second_deriv_bound: None };
        let cache = SignalCache::build(&spec);
        spec.h_c1_bound = cache.c1_bound();
        spec.h_second_deriv_bound = cache.second_bound();
        Ok(spec)
    }

    pub fn signal(&self, i: usize) -> &dyn Signal {
        self.signals[i].as_ref()
    }

    pub fn left_maps(&self) -> &[BoundaryMap] {
        &self.left
    }

    pub fn right_maps(&self) -> &[BoundaryMap] {
        &self.right
    }

    /// Forcing seen in the rescaled time `τ = t / sigma`: `h̃(τ) = h(sigma·τ)`
    /// with period `T*/sigma`.
    pub fn time_scaled(&self, sigma: f64) -> Result<Self> {
        let signals = self
            .signals
            .iter()
            .map(|s| Arc::new(Transformed { inner: s.clone(), factor: 1.0, sigma }) as Arc<dyn Signal>)
            .collect();
        Self::new(self.n, self.m, self.left.clone(), self.right.clone(), signals, self.period / sigma)
    }

    pub fn theta_data(&self) -> Result<ThetaData> {
        minimal_characterizing_number(&theta_matrix(self)?)
    }
}

/// Dense per-period samples of every signal and its first two derivatives.
struct SignalCache {
    values: Vec<Vec<f64>>,
    first: Vec<Vec<f64>>,
    second: Vec<Option<Vec<f64>>>,
}

impl SignalCache {
    fn build(spec: &BoundarySpec) -> Self {
        let dt = spec.period / FORCING_SAMPLES as f64;
        let times: Vec<f64> = (0..FORCING_SAMPLES).map(|k| k as f64 * dt).collect();
        let mut values = Vec::new();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for s in &spec.signals {
            values.push(times.iter().map(|&t| s.value(t)).collect());
            first.push(
                times
                    .iter()
                    .map(|&t| s.derivative(t).unwrap_or_else(|| (s.value(t + dt) - s.value(t - dt)) / (2.0 * dt)))
                    .collect(),
            );
            second.push(times.iter().map(|&t| s.second_derivative(t)).collect::<Option<Vec<f64>>>());
        }
        Self { values, first, second }
    }

    fn c1_norms(&self) -> Vec<f64> {
        self.values.iter().zip(&self.first).map(|(v, d)| sup(v).max(sup(d))).collect()
    }

    fn c1_bound(&self) -> f64 {
        self.c1_norms().into_iter().fold(0.0, f64::max)
    }

    fn second_bound(&self) -> Option<f64> {
        let mut worst = 0.0_f64;
        for s in &self.second {
            worst = worst.max(sup(s.as_ref()?));
        }
        Some(worst)
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
}

/// Linearized boundary coupling `Θ`: rows `r ≤ m` hold `∂G_r/∂u_s`, rows
/// `s > m` hold `∂G_s/∂u_r`, and the diagonal blocks are zero.
pub fn theta_matrix(bspec: &BoundarySpec) -> Result<DMatrix<f64>> {
    let (n, m) = (bspec.n, bspec.m);
    let mut theta = DMatrix::zeros(n, n);
    for (r, map) in bspec.right.iter().enumerate() {
        let (_, du) = map.linearize(n - m)?;
        for (k, v) in du.into_iter().enumerate() {
            theta[(r, m + k)] = v;
        }
    }
    for (k, map) in bspec.left.iter().enumerate() {
        let (_, du) = map.linearize(m)?;
        for (r, v) in du.into_iter().enumerate() {
            theta[(m + k, r)] = v;
        }
    }
    Ok(theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaData {
    pub theta_matrix: Vec<Vec<f64>>,
    /// `‖Θ‖_min`, from the Perron root of `|Θ|`.
    pub theta: f64,
    /// Max row sum of `ΓΘΓ⁻¹` at the scaling found by descent.
    pub theta_scaling: f64,
    pub optimal_scaling: Vec<f64>,
}

impl ThetaData {
    pub fn methods_agree(&self, tol: f64) -> bool {
        (self.theta - self.theta_scaling).abs() <= tol
    }
}

/// `inf_Γ ‖ΓΘΓ⁻¹‖_∞` over positive diagonal `Γ`, by two routes: the spectral
/// radius of `|Θ|` (dense eigensolve) and coordinate descent over `log γ`.
pub fn minimal_characterizing_number(theta: &DMatrix<f64>) -> Result<ThetaData> {
    let n = theta.nrows();
    let abs = theta.map(f64::abs);
    if abs.iter().all(|v| *v == 0.0) {
        return Ok(ThetaData {
            theta_matrix: to_rows(theta),
            theta: 0.0,
            theta_scaling: 0.0,
            optimal_scaling: vec![1.0; n],
        });
    }
    let rho = perron_root(&abs)?;
    let log_gamma = descend_log_scaling(&abs);
    let theta_scaling = scaled_row_sum_max(&abs, &log_gamma);
    if (rho - theta_scaling).abs() > 1e-6 {
        log::warn!("theta routes disagree: perron {rho}, descent {theta_scaling}");
    }
    Ok(ThetaData {
        theta_matrix: to_rows(theta),
        theta: rho,
        theta_scaling,
        optimal_scaling: log_gamma.iter().map(|y| y.exp()).collect(),
    })
}

/// Spectral radius of a nonnegative matrix from a dense eigensolve; by
/// Perron–Frobenius it is an eigenvalue of the matrix itself.
pub fn perron_root(abs: &DMatrix<f64>) -> Result<f64> {
    if abs.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("expected a finite nonnegative matrix".into()));
    }
    let rho = abs.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(rho)
}

fn scaled_row_sum_max(abs: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = abs.nrows();
    (0..n).map(|i| (0..n).map(|j| abs[(i, j)] * (y[i] - y[j]).exp()).sum::<f64>()).fold(0.0, f64::max)
}

/// `(1/p) log Σ_i r_i(y)^p`, an upper bound of `log max_i r_i` within `log(n)/p`.
fn smoothed_log_max(abs: &DMatrix<f64>, y: &[f64], p: f64) -> f64 {
    let n = abs.nrows();
    let logs: Vec<f64> = (0..n).map(|i| (0..n).map(|j| abs[(i, j)] * (y[i] - y[j]).exp()).sum::<f64>().ln()).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    let acc: f64 = logs.iter().map(|l| (p * (l - top)).exp()).sum();
    top + acc.ln() / p
}

const LOG_SCALE_BOUND: f64 = 60.0;

/// Coordinate descent on the smoothed max-row-sum with continuation in the
/// smoothing exponent; started from `γ = 1`.
fn descend_log_scaling(abs: &DMatrix<f64>) -> Vec<f64> {
    let n = abs.nrows();
    let mut y = vec![0.0; n];
    let mut p = 2.0;
    while p <= 2f64.powi(26) {
        for _ in 0..300 {
            let mut moved = 0.0_f64;
            for k in 0..n {
                let old = y[k];
                let best = golden_min(
                    |v| {
                        let mut z = y.clone();
                        z[k] = v;
                        smoothed_log_max(abs, &z, p)
                    },
                    old,
                );
                y[k] = best;
                moved = moved.max((best - old).abs());
            }
            let mean = y.iter().sum::<f64>() / n as f64;
            for v in &mut y {
                *v -= mean;
            }
            if moved < 1e-10 {
                break;
            }
        }
        p *= 4.0;
    }
    y
}

/// Minimizes a convex function of one variable near `start`, within
/// `[-LOG_SCALE_BOUND, LOG_SCALE_BOUND]`. Returns `start` unless a strictly
/// better point is found.
fn golden_min<F: Fn(f64) -> f64>(f: F, start: f64) -> f64 {
    let clamp = |v: f64| v.clamp(-LOG_SCALE_BOUND, LOG_SCALE_BOUND);
    let f0 = f(start);
    let mut step = 0.5;
    let right = clamp(start + step);
    let left = clamp(start - step);
    let (fr, fl) = (f(right), f(left));
    let (a, b) = if fr >= f0 && fl >= f0 {
        (left, right)
    } else {
        // march downhill with doubling steps until the function turns up
        let dir = if fr < fl { 1.0 } else { -1.0 };
        let mut behind = start;
        let mut cur = if dir > 0.0 { right } else { left };
        let mut fcur = fr.min(fl);
        loop {
            step *= 2.0;
            let next = clamp(cur + dir * step);
            let fnext = f(next);
            if fnext >= fcur || next == cur {
                break (behind.min(next), behind.max(next));
            }
            behind = cur;
            cur = next;
            fcur = fnext;
        }
    };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (a, b);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if b - a < 1e-13 * (1.0 + a.abs()) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    if f(mid) < f0 {
        mid
    } else {
        start
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcingReport {
    pub c1_norms: Vec<f64>,
    pub h_c1_bound: f64,
    pub periodicity_residual: f64,
    /// `∂G_i/∂h_i` at the origin, indexed by component.
    pub dg_dh: Vec<f64>,
    /// Factor `2M₀` applied to the forcing at `x = L` and `x = 0`, if any.
    pub rescale_right: Option<f64>,
    pub rescale_left: Option<f64>,
    pub h_second_deriv_bound: Option<f64>,
}

impl ForcingReport {
    pub fn rescaled(&self) -> bool {
        self.rescale_left.is_some() || self.rescale_right.is_some()
    }
}

pub struct ForcingValidation {
    pub report: ForcingReport,
    /// Equivalent boundary data with `|∂G/∂h̃(0)| ≤ 1/2`, when rescaling was needed.
    pub rescaled: Option<BoundarySpec>,
}

/// Measures the forcing norms and periodicity, and when some
/// `|∂G_i/∂h_i(0)| = M₀ > 1/2` on a side, produces the equivalent data
/// with `h̃_i = 2M₀ h_i` on that side.
pub fn validate_forcing(bspec: &BoundarySpec) -> Result<ForcingValidation> {
    let (n, m) = (bspec.n, bspec.m);
    let cache = SignalCache::build(bspec);
    let mut residual = 0.0_f64;
    for (i, s) in bspec.signals.iter().enumerate() {
        let mut r = 0.0_f64;
        for k in 0..FORCING_SAMPLES {
            let t = k as f64 * bspec.period / FORCING_SAMPLES as f64;
            r = r.max((s.value(t + bspec.period) - s.value(t)).abs());
        }
        if r > PERIODICITY_TOL {
            return Err(Error::Periodicity { index: i + 1, residual: r });
        }
        residual = residual.max(r);
    }

    let mut dg_dh = vec![0.0; n];
    for (r, map) in bspec.right.iter().enumerate() {
        dg_dh[r] = map.linearize(n - m)?.0;
    }
    for (k, map) in bspec.left.iter().enumerate() {
        dg_dh[m + k] = map.linearize(m)?.0;
    }
    let side_factor = |range: std::ops::Range<usize>| {
        let m0 = dg_dh[range].iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        (m0 > 0.5 + 1e-9).then_some(2.0 * m0)
    };
    let rescale_right = side_factor(0..m);
    let rescale_left = side_factor(m..n);

    let rescaled = if rescale_left.is_some() || rescale_right.is_some() {
        let fr = rescale_right.unwrap_or(1.0);
        let fl = rescale_left.unwrap_or(1.0);
        let signals = bspec
            .signals
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let factor = if i < m { fr } else { fl };
                Arc::new(Transformed { inner: s.clone(), factor, sigma: 1.0 }) as Arc<dyn Signal>
            })
            .collect();
        let right = bspec.right.iter().map(|g| g.forcing_rescaled(fr)).collect();
        let left = bspec.left.iter().map(|g| g.forcing_rescaled(fl)).collect();
        Some(BoundarySpec::new(n, m, left, right, signals, bspec.period)?)
    } else {
        None
    };

    Ok(ForcingValidation {
        report: ForcingReport {
            c1_norms: cache.c1_norms(),
            h_c1_bound: cache.c1_bound(),
            periodicity_residual: residual,
            dg_dh,
            rescale_right,
            rescale_left,
            h_second_deriv_bound: cache.second_bound(),
        },
        rescaled,
    })
}

/// Incoming components at one end: at `x = 0` the `u_s` from
/// `outgoing = (u_1..u_m)`, at `x = L` the `u_r` from `outgoing = (u_{m+1}..u_n)`.
pub fn eval_boundary(bspec: &BoundarySpec, side: Side, t: f64, outgoing: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    eval_boundary_into(bspec, side, t, outgoing, &mut out)?;
    Ok(out)
}

pub(crate) fn eval_boundary_into(
    bspec: &BoundarySpec,
    side: Side,
    t: f64,
    outgoing: &[f64],
    out: &mut Vec<f64>,
) -> Result<()> {
    let (n, m) = (bspec.n, bspec.m);
    let (maps, offset, expected) = match side {
        Side::Left => (&bspec.left, m, m),
        Side::Right => (&bspec.right, 0, n - m),
    };
    if outgoing.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "{side:?} boundary expects {expected} outgoing values, got {}",
            outgoing.len()
        )));
    }
    out.clear();
    for (k, map) in maps.iter().enumerate() {
        let v = map.eval(bspec.signals[offset + k].value(t), outgoing);
        if !v.is_finite() {
            return Err(Error::BoundaryMap(format!("non-finite value for component {}", offset + k + 1)));
        }
        out.push(v);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reflect(k: f64, h1: Arc<dyn Signal>, h2: Arc<dyn Signal>) -> BoundarySpec {
        BoundarySpec::new(
            2,
            1,
            vec![BoundaryMap::linear(vec![k])],
            vec![BoundaryMap::linear(vec![k])],
            vec![h1, h2],
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn theta_of_linear_reflection() {
        let z = Arc::new(Harmonics::zero(2.0));
        let b = reflect(0.5, z.clone(), z);
        let th = theta_matrix(&b).unwrap();
        assert_eq!(th, DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]));
        let data = b.theta_data().unwrap();
        assert!((data.theta - 0.5).abs() < 1e-12);
        assert!((data.theta_scaling - 0.5).abs() < 1e-9);
    }

    #[test]
    fn theta_of_decoupled_and_quadratic_feedback() {
        let z: Arc<dyn Signal> = Arc::new(Harmonics::zero(1.0));
        let decoupled = BoundarySpec::new(
            2,
            1,
            vec![BoundaryMap::new(|h, _| h)],
            vec![BoundaryMap::new(|h, _| h)],
            vec![z.clone(), z.clone()],
            1.0,
        )
        .unwrap();
        assert_eq!(theta_matrix(&decoupled).unwrap(), DMatrix::zeros(2, 2));
        let quad = BoundarySpec::new(
            2,
            1,
            vec![BoundaryMap::new(|h, u| h + u[0] * u[0])],
            vec![BoundaryMap::new(|h, u| h + u[0] * u[0])],
            vec![z.clone(), z],
            1.0,
        )
        .unwrap();
        assert!(theta_matrix(&quad).unwrap().amax() < 1e-12);
    }

    #[test]
    fn asymmetric_two_by_two() {
        let th = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.12, 0.0]);
        let d = minimal_characterizing_number(&th).unwrap();
        assert!((d.theta - 0.036f64.sqrt()).abs() < 1e-8);
        assert!((d.theta_scaling - 0.036f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn zero_matrix_has_zero_theta() {
        let d = minimal_characterizing_number(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(d.theta, 0.0);
        assert_eq!(d.optimal_scaling, vec![1.0; 3]);
    }

    #[test]
    fn reducible_matrix() {
        // nilpotent: spectral radius zero, infimum approached but not attained
        let th = DMatrix::from_row_slice(2, 2, &[0.0, 0.7, 0.0, 0.0]);
        let d = minimal_characterizing_number(&th).unwrap();
        assert!(d.theta < 1e-10);
        assert!(d.theta_scaling < 1e-6);
    }

    #[test]
    fn forcing_norms_and_periodicity() {
        let h: Arc<dyn Signal> = Arc::new(Harmonics::sine(0.01, 1.0));
        let z: Arc<dyn Signal> = Arc::new(Harmonics::zero(1.0));
        let b = BoundarySpec::new(1, 0, vec![BoundaryMap::new(|h, _| h)], vec![], vec![h], 1.0).unwrap();
        let v = validate_forcing(&b).unwrap();
        assert!((v.report.h_c1_bound - 0.02 * std::f64::consts::PI).abs() < 1e-6);
        // ∂G/∂h = 1 > 1/2 calls for h̃ = 2h
        assert_eq!(v.report.rescale_left, Some(2.0));
        assert!(v.report.h_second_deriv_bound.is_some());

        let ramp: Arc<dyn Signal> = Arc::new(FnSignal(|t: f64| t));
        let b = BoundarySpec::new(1, 0, vec![BoundaryMap::new(|h, _| h)], vec![], vec![ramp], 1.0).unwrap();
        assert!(matches!(validate_forcing(&b), Err(Error::Periodicity { index: 1, .. })));

        // closure signal: derivative by differences, no second derivative
        let s: Arc<dyn Signal> = Arc::new(FnSignal(|t: f64| 0.01 * (TAU * t).sin()));
        let b = BoundarySpec::new(
            2,
            1,
            vec![BoundaryMap::linear(vec![0.0])],
            vec![BoundaryMap::linear(vec![0.0])],
            vec![z, s],
            1.0,
        )
        .unwrap();
        let v = validate_forcing(&b).unwrap();
        assert!((v.report.c1_norms[1] - 0.02 * std::f64::consts::PI).abs() < 1e-6);
        assert_eq!(v.report.h_second_deriv_bound, None);
    }

    #[test]
    fn forcing_rescaling_is_idempotent() {
        let h: Arc<dyn Signal> = Arc::new(Harmonics::sine(0.01, 1.0));
        let b = BoundarySpec::new(1, 0, vec![BoundaryMap::new(|h, _| 2.0 * h)], vec![], vec![h.clone()], 1.0).unwrap();
        let v = validate_forcing(&b).unwrap();
        assert!((v.report.dg_dh[0] - 2.0).abs() < 1e-8);
        assert!((v.report.rescale_left.unwrap() - 4.0).abs() < 1e-7);
        let r = v.rescaled.unwrap();
        for t in [0.1, 0.37, 0.8] {
            assert!((r.signal(0).value(t) - 4.0 * h.value(t)).abs() < 1e-9);
            // boundary values are unchanged by the reparametrization
            let a = eval_boundary(&b, Side::Left, t, &[]).unwrap()[0];
            let c = eval_boundary(&r, Side::Left, t, &[]).unwrap()[0];
            assert!((a - c).abs() < 1e-15);
        }
        let again = validate_forcing(&r).unwrap();
        assert!(!again.report.rescaled());
        assert!((again.report.dg_dh[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn boundary_evaluation() {
        let z: Arc<dyn Signal> = Arc::new(Harmonics::zero(2.0));
        let b = reflect(0.5, z.clone(), z.clone());
        assert_eq!(eval_boundary(&b, Side::Left, 0.3, &[0.0]).unwrap(), vec![0.0]);
        assert_eq!(eval_boundary(&b, Side::Right, 0.3, &[0.0]).unwrap(), vec![0.0]);
        assert!((eval_boundary(&b, Side::Left, 0.0, &[0.02]).unwrap()[0] - 0.01).abs() < 1e-15);
        assert!(eval_boundary(&b, Side::Left, 0.0, &[0.02, 0.1]).is_err());

        let h: Arc<dyn Signal> = Arc::new(Harmonics::sine(0.01, 1.0));
        let e1 = BoundarySpec::new(1, 0, vec![BoundaryMap::new(|h, _| h)], vec![], vec![h], 1.0).unwrap();
        assert!((eval_boundary(&e1, Side::Left, 0.25, &[]).unwrap()[0] - 0.01).abs() < 1e-15);

        let bad = BoundarySpec::new(1, 0, vec![BoundaryMap::new(|_, _| f64::NAN)], vec![], vec![z], 2.0).unwrap();
        assert!(matches!(eval_boundary(&bad, Side::Left, 0.0, &[]), Err(Error::BoundaryMap(_))));
    }

    #[test]
    fn time_scaling_of_forcing() {
        let h: Arc<dyn Signal> = Arc::new(Harmonics::sine(0.01, 2.0));
        let b = BoundarySpec::new(1, 0, vec![BoundaryMap::new(|h, _| h)], vec![], vec![h.clone()], 2.0).unwrap();
        let s = b.time_scaled(2.0).unwrap();
        assert_eq!(s.period, 1.0);
        assert!((s.signal(0).value(0.3) - h.value(0.6)).abs() < 1e-15);
        assert!(validate_forcing(&s).is_ok());
    }
}
