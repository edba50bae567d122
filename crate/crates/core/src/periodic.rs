//! The Picard iteration for the time-periodic solution.
//!
//! Each iterate solves, family by family, the decoupled linear transport
//! problems
//!
//! ```text
//! ∂_x u_i + μ_i(u⁻) ∂_t u_i − g̃_ii u_i = R_i(u⁻)
//! R_i = Σ_j B_ij(u⁻)(∂_x u⁻_j + μ_i(u⁻) ∂_t u⁻_j) + Σ_{j≠i} g̃_ij u⁻_j + K μ_i(0) u⁻_i + g̃_i^NL(u⁻)
//! ```
//!
//! with inflow data `u_s(t, 0) = G_s(h_s(t), u⁻_1..u⁻_m)` and
//! `u_r(t, L) = G_r(h_r(t), u⁻_{m+1}..u⁻_n)`, where `u⁻` is the previous
//! iterate. Along the characteristic `dt/dx = μ_i(u⁻)` the equation becomes
//! the scalar ODE `du_i/dx = g̃_ii u_i + R_i`, solved with the exact
//! integrating factor and trapezoidal quadrature of the forcing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::BoundarySpec;
use crate::diagnostics::{smallness_certificate, weights, Certificate};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::fit::{log_linear_slope, RateFit};
use crate::system::{SourceLinearization, SystemSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    pub nt: usize,
    pub nx: usize,
    /// Splitting constant; `None` selects `K_min + 1e-6`.
    pub k: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self { nt: 128, nx: 128, k: None, tol: 1e-10, max_iter: 200 }
    }
}

impl IterationConfig {
    pub fn grid(nt: usize, nx: usize) -> Self {
        Self { nt, nx, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nt < 8 || self.nx < 8 {
            return Err(Error::InvalidArgument(format!("grid must be at least 8x8, got {}x{}", self.nt, self.nx)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// `max_i ‖u_i^(l) − u_i^(l−1)‖_{C⁰}` for `l = 1, 2, …`.
    pub deltas: Vec<f64>,
    /// Same for the first derivatives (informational).
    pub c1_deltas: Vec<f64>,
    pub fitted_beta: RateFit,
    pub iterations: usize,
    pub converged: bool,
    pub certificate: Certificate,
}

/// Everything an iterate needs besides the previous field.
pub struct PeriodicProblem<'a> {
    pub spec: &'a SystemSpec,
    pub bspec: &'a BoundarySpec,
    pub lin: SourceLinearization,
    nt: usize,
    nx: usize,
}

impl<'a> PeriodicProblem<'a> {
    pub fn new(spec: &'a SystemSpec, bspec: &'a BoundarySpec, cfg: &IterationConfig) -> Result<Self> {
        cfg.validate()?;
        if spec.n != bspec.n || spec.m != bspec.m {
            return Err(Error::InvalidArgument(format!(
                "system is ({}, {}) but boundary data is ({}, {})",
                spec.n, spec.m, bspec.n, bspec.m
            )));
        }
        let lin = SourceLinearization::new(spec, cfg.k)?;
        Ok(Self { spec, bspec, lin, nt: cfg.nt, nx: cfg.nx })
    }

    pub fn zero_field(&self) -> Field {
        Field::zeros(self.nt, self.nx, self.spec.n, self.bspec.period, self.spec.length)
    }

    pub fn certificate(&self) -> Result<Certificate> {
        let theta = self.bspec.theta_data()?.theta;
        let w = weights(&self.lin.gtilde_matrix(), self.spec.length, self.spec.n, self.spec.m)?;
        Ok(smallness_certificate(theta, self.lin.k, self.spec.length, w.m3))
    }

    /// Speeds `μ_i(u⁻)` and right-hand sides `R_i(u⁻)` at every node,
    /// packed per family as `(μ, R)` pairs.
    fn node_coefficients(&self, prev: &Field) -> Result<Vec<Vec<[f64; 2]>>> {
        let spec = self.spec;
        let n = spec.n;
        let nodes_per_row = prev.nx + 1;
        let dtf = prev.dt_field();
        let dxf = prev.dx_field();
        let gt = self.lin.gtilde_matrix();
        let g0 = self.lin.g0_matrix();
        let k = self.lin.k;
        let mu0 = &self.lin.mu0;

        let rows: Vec<Vec<[f64; 2]>> = (0..prev.nt)
            .into_par_iter()
            .map(|j| -> Result<Vec<[f64; 2]>> {
                let mut out = vec![[0.0; 2]; nodes_per_row * n];
                for kx in 0..nodes_per_row {
                    let u = prev.node(j, kx);
                    spec.check_domain(u)?;
                    let eig = spec.eigen(u)?;
                    let b = eig.coupling()?;
                    let gnl = crate::system::nonlinear_remainder(spec, &g0, mu0, &eig, u)?;
                    let ut = dtf.node(j, kx);
                    let ux = dxf.node(j, kx);
                    for i in 0..n {
                        let mu = eig.mus[i];
                        let mut r = gnl[i] + k * mu0[i] * u[i];
                        for jj in 0..n {
                            if jj != i {
                                r += b[(i, jj)] * (ux[jj] + mu * ut[jj]) + gt[(i, jj)] * u[jj];
                            }
                        }
                        out[kx * n + i] = [mu, r];
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;

        // regroup as one (Nt × (Nx+1)) grid per family
        let mut per_family = vec![Vec::with_capacity(prev.nt * nodes_per_row); n];
        for row in rows {
            for kx in 0..nodes_per_row {
                for i in 0..n {
                    per_family[i].push(row[kx * n + i]);
                }
            }
        }
        Ok(per_family)
    }

    /// One application of the iteration map.
    pub fn step(&self, prev: &Field) -> Result<Field> {
        let spec = self.spec;
        let bspec = self.bspec;
        let (n, m) = (spec.n, spec.m);
        let (nt, nx) = (prev.nt, prev.nx);
        let coeffs = self.node_coefficients(prev)?;
        let grids: Vec<FamilyGrid> =
            coeffs.into_iter().map(|c| FamilyGrid::new(c, nt, nx, prev.period, prev.length)).collect();
        let gt = self.lin.gtilde_matrix();
        let step = prev.length / (4.0 * nx as f64);
        let length = prev.length;

        let mut out = Field::zeros(nt, nx, n, prev.period, prev.length);
        let row_len = (nx + 1) * n;
        out.values_mut().par_chunks_mut(row_len).enumerate().try_for_each(|(j, row)| -> Result<()> {
            let t0 = prev.t(j);
            let mut outgoing = Vec::with_capacity(n);
            for kx in 0..=nx {
                let x0 = prev.x(kx);
                for i in 0..n {
                    let negative = i < m;
                    let target = if negative { length } else { 0.0 };
                    let grid = &grids[i];
                    let rate = gt[(i, i)];

                    let (foot_t, integral) = march(grid, negative, step, t0, x0, target, rate)?;

                    outgoing.clear();
                    let boundary_value = if negative {
                        for jj in m..n {
                            outgoing.push(prev_at_edge(prev, foot_t, nx, jj));
                        }
                        bspec.right_maps()[i].eval(bspec.signal(i).value(foot_t), &outgoing)
                    } else {
                        for jj in 0..m {
                            outgoing.push(prev_at_edge(prev, foot_t, 0, jj));
                        }
                        bspec.left_maps()[i - m].eval(bspec.signal(i).value(foot_t), &outgoing)
                    };
                    if !boundary_value.is_finite() {
                        return Err(Error::BoundaryMap(format!("non-finite boundary value for component {}", i + 1)));
                    }
                    let value = (rate * (x0 - target)).exp() * boundary_value + integral;
                    row[kx * n + i] = value;
                }
                spec.check_domain(&row[kx * n..(kx + 1) * n])?;
            }
            Ok(())
        })?;
        Ok(out)
    }
}

/// `u⁻_i(t, x_k)` for an edge column `k`, interpolated in time only.
fn prev_at_edge(prev: &Field, t: f64, k: usize, i: usize) -> f64 {
    let s = prev.stencil(t, prev.x(k));
    prev.at(&s, i)
}

/// Per-family node data `(μ_i, R_i)` with bilinear lookup.
struct FamilyGrid {
    data: Vec<[f64; 2]>,
    nt: usize,
    nx: usize,
    t_scale: f64,
    x_scale: f64,
    constant_speed: Option<f64>,
}

impl FamilyGrid {
    fn new(data: Vec<[f64; 2]>, nt: usize, nx: usize, period: f64, length: f64) -> Self {
        let first = data[0][0];
        let constant_speed = data.iter().all(|d| d[0] == first).then_some(first);
        Self { data, nt, nx, t_scale: nt as f64 / period, x_scale: nx as f64 / length, constant_speed }
    }

    /// Bilinear weights and the four corner offsets for `(t, x)`.
    #[inline(always)]
    fn corners(&self, t: f64, x: f64) -> ([usize; 4], f64, f64) {
        // i64 conversions are cheaper than usize ones, and traces stay within
        // a few periods of the base cell, so wrapping by loops beats rem_euclid
        let tp = t * self.t_scale;
        let mut j = tp as i64;
        if j as f64 > tp {
            j -= 1;
        }
        let wt = tp - j as f64;
        let nt = self.nt as i64;
        while j < 0 {
            j += nt;
        }
        while j >= nt {
            j -= nt;
        }
        let j0 = j as usize;
        let j1 = if j0 + 1 == self.nt { 0 } else { j0 + 1 };
        let xp = (x * self.x_scale).clamp(0.0, self.nx as f64);
        let k0 = ((xp as i64) as usize).min(self.nx - 1);
        let wx = xp - k0 as f64;
        let w = self.nx + 1;
        ([j0 * w + k0, j0 * w + k0 + 1, j1 * w + k0, j1 * w + k0 + 1], wt, wx)
    }

    #[inline(always)]
    fn blend(&self, idx: &[usize; 4], wt: f64, wx: f64, c: usize) -> f64 {
        let d = &self.data;
        let lo = d[idx[0]][c] + wx * (d[idx[1]][c] - d[idx[0]][c]);
        let hi = d[idx[2]][c] + wx * (d[idx[3]][c] - d[idx[2]][c]);
        lo + wt * (hi - lo)
    }

    #[inline(always)]
    fn speed(&self, t: f64, x: f64) -> f64 {
        let (idx, wt, wx) = self.corners(t, x);
        self.blend(&idx, wt, wx, 0)
    }

    #[inline(always)]
    fn rhs(&self, t: f64, x: f64) -> f64 {
        let (idx, wt, wx) = self.corners(t, x);
        self.blend(&idx, wt, wx, 1)
    }

    /// `R` at a lattice position; `t` wraps, `x` is clamped to the grid.
    #[inline(always)]
    fn rhs_at_cells(&self, tc: &CellCoord, xc: &CellCoord) -> f64 {
        let nt = self.nt as i64;
        let mut j = tc.cell;
        while j < 0 {
            j += nt;
        }
        while j >= nt {
            j -= nt;
        }
        let j0 = j as usize;
        let j1 = if j0 + 1 == self.nt { 0 } else { j0 + 1 };
        let (k0, wx) = if xc.cell < 0 {
            (0, 0.0)
        } else if xc.cell as usize >= self.nx {
            (self.nx - 1, 1.0)
        } else {
            (xc.cell as usize, xc.frac)
        };
        let w = self.nx + 1;
        self.blend(&[j0 * w + k0, j0 * w + k0 + 1, j1 * w + k0, j1 * w + k0 + 1], tc.frac, wx, 1)
    }

    #[inline(always)]
    fn both(&self, t: f64, x: f64) -> (f64, f64) {
        let (idx, wt, wx) = self.corners(t, x);
        (self.blend(&idx, wt, wx, 0), self.blend(&idx, wt, wx, 1))
    }
}

/// A lattice coordinate split into cell index and offset in `[0, 1)`.
struct CellCoord {
    cell: i64,
    frac: f64,
}

impl CellCoord {
    #[inline(always)]
    fn new(pos: f64) -> Self {
        let mut cell = pos as i64;
        if cell as f64 > pos {
            cell -= 1;
        }
        Self { cell, frac: pos - cell as f64 }
    }

    #[inline(always)]
    fn advance(&mut self, by: f64) {
        self.frac += by;
        while self.frac >= 1.0 {
            self.frac -= 1.0;
            self.cell += 1;
        }
        while self.frac < 0.0 {
            self.frac += 1.0;
            self.cell -= 1;
        }
    }
}

fn sign_error(negative: bool, mu: f64) -> Error {
    Error::Signature { n: 0, expected_negative: usize::from(negative), found_negative: usize::from(mu < 0.0) }
}

/// Traces one characteristic from `(t0, x0)` to `target` with RK4 in `x`
/// (step `step`, last step shortened) and accumulates
/// `∫_{target}^{x0} e^{rate (x0 − ξ)} R(t(ξ), ξ) dξ` by the trapezoidal rule
/// on the trace nodes. Returns the foot time and the integral.
fn march(grid: &FamilyGrid, negative: bool, step: f64, t0: f64, x0: f64, target: f64, rate: f64) -> Result<(f64, f64)> {
    let dist = target - x0;
    let dir = dist.signum();
    let count = ((dist.abs() / step) - 1e-9).ceil().max(0.0) as usize;
    let bad = |mu: f64| !mu.is_finite() || mu == 0.0 || (mu < 0.0) != negative;
    // e^{rate (x0 − x)} is advanced multiplicatively along the uniform steps
    let uniform = (-rate * dir * step).exp();
    let mut weight = 1.0;
    let (mut t, mut x) = (t0, x0);
    let mut integral = 0.0;

    if let Some(mu) = grid.constant_speed {
        if bad(mu) {
            return Err(sign_error(negative, mu));
        }
        // on a straight line both cell coordinates advance by constant
        // increments, so the lattice position is carried along instead of
        // being recomputed from (t, x) at every node
        let dtc = mu * dir * step * grid.t_scale;
        let dxc = dir * step * grid.x_scale;
        let mut tc = CellCoord::new(t0 * grid.t_scale);
        let mut xc = CellCoord::new(x0 * grid.x_scale);
        let mut f_prev = grid.rhs(t0, x0);
        for q in 0..count {
            let last = q + 1 == count;
            let next_x = if last { target } else { x0 + dir * step * (q + 1) as f64 };
            weight *= if last { (-rate * (next_x - x)).exp() } else { uniform };
            t = t0 + mu * (next_x - x0);
            let r = if last {
                grid.rhs(t, next_x)
            } else {
                tc.advance(dtc);
                xc.advance(dxc);
                grid.rhs_at_cells(&tc, &xc)
            };
            let f = weight * r;
            integral += 0.5 * (f_prev + f) * (x - next_x);
            f_prev = f;
            x = next_x;
        }
        return Ok((t, integral));
    }

    let (mut k1, r0) = grid.both(t, x);
    let mut f_prev = r0;
    for q in 0..count {
        let next_x = if q + 1 == count { target } else { x0 + dir * step * (q + 1) as f64 };
        let s = next_x - x;
        if bad(k1) {
            return Err(sign_error(negative, k1));
        }
        let k2 = grid.speed(t + 0.5 * s * k1, x + 0.5 * s);
        let k3 = grid.speed(t + 0.5 * s * k2, x + 0.5 * s);
        let k4 = grid.speed(t + s * k3, next_x);
        if bad(k2) || bad(k3) || bad(k4) {
            return Err(sign_error(
                negative,
                if bad(k2) {
                    k2
                } else if bad(k3) {
                    k3
                } else {
                    k4
                },
            ));
        }
        t += s * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        weight *= if q + 1 == count { (-rate * s).exp() } else { uniform };
        let (mu, r) = grid.both(t, next_x);
        let f = weight * r;
        integral += 0.5 * (f_prev + f) * (x - next_x);
        f_prev = f;
        k1 = mu;
        x = next_x;
    }
    Ok((t, integral))
}

/// One iterate `u^(l)` from `u^(l−1)`.
pub fn linearized_step(prev: &Field, spec: &SystemSpec, bspec: &BoundarySpec, cfg: &IterationConfig) -> Result<Field> {
    let cfg = IterationConfig { nt: prev.nt, nx: prev.nx, ..cfg.clone() };
    PeriodicProblem::new(spec, bspec, &cfg)?.step(prev)
}

/// Iterates from `u^(0) ≡ 0` until the C⁰ delta drops below `cfg.tol`.
pub fn solve_periodic(
    spec: &SystemSpec,
    bspec: &BoundarySpec,
    cfg: &IterationConfig,
) -> Result<(Field, IterationReport)> {
    let problem = PeriodicProblem::new(spec, bspec, cfg)?;
    let certificate = problem.certificate()?;
    let mut prev = problem.zero_field();
    let mut prev_dt = prev.dt_field();
    let mut prev_dx = prev.dx_field();
    let mut deltas = Vec::new();
    let mut c1_deltas = Vec::new();
    let mut converged = false;
    for l in 1..=cfg.max_iter {
        let next = problem.step(&prev)?;
        let d = next.sup_diff(&prev);
        let (ndt, ndx) = (next.dt_field(), next.dx_field());
        c1_deltas.push(d.max(ndt.sup_diff(&prev_dt)).max(ndx.sup_diff(&prev_dx)));
        deltas.push(d);
        log::debug!("iteration {l}: delta {d:e}");
        prev = next;
        prev_dt = ndt;
        prev_dx = ndx;
        if d <= cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged && deltas.len() >= 6 {
        let tail = &deltas[deltas.len() - 6..];
        if tail.windows(2).all(|w| w[1] >= w[0]) {
            return Err(Error::NonContraction(tail.to_vec()));
        }
    }
    let report = IterationReport {
        fitted_beta: fit_contraction_rate(&deltas),
        iterations: deltas.len(),
        converged,
        deltas,
        c1_deltas,
        certificate,
    };
    Ok((prev, report))
}

const NOISE_FLOOR: f64 = 100.0 * f64::EPSILON;

/// Geometric ratio `β̂ = exp(slope)` of a least-squares line through
/// `log d_l`. The first two iterations are dropped when at least four
/// usable points remain without them.
pub fn fit_contraction_rate(deltas: &[f64]) -> RateFit {
    let usable: Vec<(f64, f64)> =
        deltas.iter().enumerate().filter(|(_, d)| **d > NOISE_FLOOR).map(|(l, d)| ((l + 1) as f64, d.ln())).collect();
    if usable.is_empty() && !deltas.is_empty() {
        return RateFit::ConvergedImmediately;
    }
    let tail: Vec<(f64, f64)> = usable.iter().copied().filter(|(l, _)| *l > 2.0).collect();
    let points = if tail.len() >= 4 { tail } else { usable };
    if points.len() < 4 {
        return RateFit::Insufficient;
    }
    match log_linear_slope(&points) {
        Some(slope) => RateFit::Rate(slope.exp()),
        None => RateFit::Insufficient,
    }
}

/// The datum `u₀(x) = u^(P)(0, x)` that launches the periodic solution.
pub fn extract_initial_data(field: &Field) -> Vec<Vec<f64>> {
    field.row(0)
}
