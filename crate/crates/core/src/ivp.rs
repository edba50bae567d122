//! Forward-in-time solver for the initial-boundary value problem and the
//! decay measurements against a periodic solution.
//!
//! Semi-discretization: at each node `du/dt = −Σ_i λ_i(u) (l_i(u)·D_i u) r_i(u) + F(u)`,
//! where `D_i` is the second-order one-sided difference taken from the side
//! family `i` comes from. Time stepping is Heun's method with the boundary
//! maps imposed after each stage.

use serde::{Deserialize, Serialize};

use crate::boundary::BoundarySpec;
use crate::diagnostics::{csv_real, csv_table, Report};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::fit::{log_linear_slope, RateFit};
use crate::sampling::sample_ball;
use crate::system::{measure_mu_max, SystemSpec, DEFAULT_SAMPLES};

/// Largest admissible Courant number for Heun with second-order upwinding.
pub const CFL_LIMIT: f64 = 0.5;
pub const DEFAULT_CFL: f64 = 0.4;
/// Deviations at or below this are treated as exact agreement.
pub const PHI_FLOOR: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvpState {
    pub t: f64,
    /// `Nx + 1` states on the uniform grid over `[0, L]`.
    pub u: Vec<Vec<f64>>,
    pub dx: f64,
}

impl IvpState {
    pub fn new(t: f64, u: Vec<Vec<f64>>, length: f64) -> Result<Self> {
        if u.len() < 4 {
            return Err(Error::InvalidArgument(format!("need at least 4 nodes, got {}", u.len())));
        }
        let dx = length / (u.len() - 1) as f64;
        Ok(Self { t, u, dx })
    }

    pub fn nx(&self) -> usize {
        self.u.len() - 1
    }
}

/// Spatial operator `L(u)` at every node.
fn rhs(u: &[Vec<f64>], dx: f64, spec: &SystemSpec) -> Result<(Vec<Vec<f64>>, f64)> {
    let n = spec.n;
    let nx = u.len() - 1;
    let mut out = vec![vec![0.0; n]; nx + 1];
    let mut diff = vec![0.0; n];
    let mut lam_max = 0.0_f64;
    for k in 0..=nx {
        let uk = &u[k];
        spec.check_domain(uk)?;
        let eig = spec.eigen(uk)?;
        let f = spec.source(uk);
        for (i, &lam) in eig.lambdas.iter().enumerate() {
            lam_max = lam_max.max(lam.abs());
            let from_left = lam > 0.0;
            for c in 0..n {
                let v = |kk: usize| u[kk][c];
                diff[c] = if k == 0 {
                    (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * dx)
                } else if k == nx {
                    (3.0 * v(nx) - 4.0 * v(nx - 1) + v(nx - 2)) / (2.0 * dx)
                } else if from_left {
                    if k == 1 {
                        (v(1) - v(0)) / dx
                    } else {
                        (3.0 * v(k) - 4.0 * v(k - 1) + v(k - 2)) / (2.0 * dx)
                    }
                } else if k == nx - 1 {
                    (v(nx) - v(nx - 1)) / dx
                } else {
                    (-3.0 * v(k) + 4.0 * v(k + 1) - v(k + 2)) / (2.0 * dx)
                };
            }
            let w: f64 = (0..n).map(|c| eig.left[(i, c)] * diff[c]).sum();
            for c in 0..n {
                out[k][c] -= lam * w * eig.right[(c, i)];
            }
        }
        for c in 0..n {
            out[k][c] += f[c];
        }
    }
    Ok((out, lam_max))
}

/// Overwrites the incoming components at both ends from the outgoing ones.
fn impose_boundary(u: &mut [Vec<f64>], t: f64, spec: &SystemSpec, bspec: &BoundarySpec) -> Result<()> {
    let (n, m) = (spec.n, spec.m);
    let nx = u.len() - 1;
    let outgoing_left: Vec<f64> = u[0][..m].to_vec();
    for (k, map) in bspec.left_maps().iter().enumerate() {
        u[0][m + k] = map.eval(bspec.signal(m + k).value(t), &outgoing_left);
    }
    let outgoing_right: Vec<f64> = u[nx][m..n].to_vec();
    for (r, map) in bspec.right_maps().iter().enumerate() {
        u[nx][r] = map.eval(bspec.signal(r).value(t), &outgoing_right);
    }
    for k in [0, nx] {
        if u[k].iter().any(|v| !v.is_finite()) {
            return Err(Error::BoundaryMap(format!("non-finite boundary value at t = {t}")));
        }
    }
    Ok(())
}

fn axpy(u: &[Vec<f64>], a: f64, d: &[Vec<f64>]) -> Vec<Vec<f64>> {
    u.iter().zip(d).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + a * q).collect()).collect()
}

/// One Heun step of size `dt`.
pub fn step(state: &IvpState, dt: f64, spec: &SystemSpec, bspec: &BoundarySpec) -> Result<IvpState> {
    if state.u.iter().any(|v| v.len() != spec.n) {
        return Err(Error::InvalidArgument("profile does not match the system size".into()));
    }
    let (k1, lam_max) = rhs(&state.u, state.dx, spec)?;
    let limit = CFL_LIMIT * state.dx / lam_max;
    if !(dt > 0.0) || dt > limit {
        return Err(Error::StepSize { dt, limit });
    }
    let t1 = state.t + dt;
    let mut stage = axpy(&state.u, dt, &k1);
    impose_boundary(&mut stage, t1, spec, bspec)?;
    let (k2, _) = rhs(&stage, state.dx, spec)?;
    let mut next: Vec<Vec<f64>> = state
        .u
        .iter()
        .zip(&k1)
        .zip(&k2)
        .map(|((u, a), b)| u.iter().zip(a).zip(b).map(|((u, a), b)| u + 0.5 * dt * (a + b)).collect())
        .collect();
    impose_boundary(&mut next, t1, spec, bspec)?;
    for u in &next {
        spec.check_domain(u)?;
    }
    Ok(IvpState { t: t1, u: next, dx: state.dx })
}

/// `max |λ|` over the sampled neighbourhood `U`.
pub fn speed_bound(spec: &SystemSpec) -> Result<f64> {
    let mut points = sample_ball(spec.n, spec.domain_radius, DEFAULT_SAMPLES);
    points.push(vec![0.0; spec.n]);
    let mut lam = 0.0_f64;
    for u in &points {
        for l in spec.eigen(u)?.lambdas {
            lam = lam.max(l.abs());
        }
    }
    Ok(lam)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub profiles: Vec<Vec<Vec<f64>>>,
    pub length: f64,
    pub dt: f64,
    /// Corner mismatch of `u0` with the boundary maps at `t = 0`.
    pub compatibility_residual: f64,
    /// Set when the run stopped early because the state left `U`.
    pub halted: Option<String>,
}

/// `max |u_incoming(0, end) − G(h(0), u_outgoing(0, end))|` over both ends.
pub fn compatibility_residual(u0: &[Vec<f64>], spec: &SystemSpec, bspec: &BoundarySpec) -> f64 {
    let mut fixed = u0.to_vec();
    if impose_boundary(&mut fixed, 0.0, spec, bspec).is_err() {
        return f64::INFINITY;
    }
    let nx = u0.len() - 1;
    [0, nx].iter().flat_map(|&k| u0[k].iter().zip(&fixed[k]).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max)
}

/// Integrates from `u0` at `t = 0` to `t_end`, recording every
/// `record_every` (the time step is chosen to divide it). A state leaving
/// `U` ends the run early with `halted` set rather than failing.
pub fn run(
    u0: &[Vec<f64>],
    spec: &SystemSpec,
    bspec: &BoundarySpec,
    t_end: f64,
    record_every: f64,
    cfl: f64,
) -> Result<Trajectory> {
    if !(cfl > 0.0 && cfl <= CFL_LIMIT) {
        return Err(Error::InvalidArgument(format!("CFL number must lie in (0, {CFL_LIMIT}], got {cfl}")));
    }
    if !(t_end >= 0.0) || !(record_every > 0.0) {
        return Err(Error::InvalidArgument(format!("bad time window t_end={t_end}, record_every={record_every}")));
    }
    let length = spec.length;
    let mut state = IvpState::new(0.0, u0.to_vec(), length)?;
    let dt_max = cfl * state.dx / speed_bound(spec)?;
    let substeps = ((record_every / dt_max) - 1e-9).ceil().max(1.0) as usize;
    let dt = record_every / substeps as f64;
    let records = (t_end / record_every + 1e-9).floor() as usize;

    let mut traj = Trajectory {
        times: vec![0.0],
        profiles: vec![u0.to_vec()],
        length,
        dt,
        compatibility_residual: compatibility_residual(u0, spec, bspec),
        halted: None,
    };
    log::debug!("ivp: dt = {dt:e}, {substeps} steps per record, {records} records");
    for r in 1..=records {
        for _ in 0..substeps {
            match step(&state, dt, spec, bspec) {
                Ok(next) => state = next,
                Err(e @ Error::Domain { .. }) => {
                    log::warn!("ivp halted at t = {}: {e}", state.t);
                    traj.halted = Some(format!("t = {}: {e}", state.t));
                    return Ok(traj);
                }
                Err(e) => return Err(e),
            }
        }
        // keep record times exact multiples of the cadence
        state.t = r as f64 * record_every;
        traj.times.push(state.t);
        traj.profiles.push(state.u.clone());
    }
    Ok(traj)
}

/// Smooth bump `a·exp(1 − 1/(1 − (2x/L − 1)²))`, zero at both ends.
pub fn bump(x: f64, length: f64, amplitude: f64) -> f64 {
    let s = 2.0 * x / length - 1.0;
    let q = 1.0 - s * s;
    if q <= 0.0 {
        0.0
    } else {
        amplitude * (1.0 - 1.0 / q).exp()
    }
}

/// `profile + bump` with a separate signed amplitude per component.
pub fn perturb(profile: &[Vec<f64>], length: f64, amplitudes: &[f64]) -> Vec<Vec<f64>> {
    let nx = profile.len() - 1;
    profile
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let x = k as f64 * length / nx as f64;
            u.iter().zip(amplitudes).map(|(v, a)| v + bump(x, length, *a)).collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `(t, Φ(t))` with `Φ(t) = max_i sup_x |u_i(t, x) − u_i^P(t, x)|`.
    pub phi_samples: Vec<(f64, f64)>,
    /// `(t, max(sup|∂_t(u − u^P)|, sup|∂_x(u − u^P)|))`.
    pub dphi_samples: Vec<(f64, f64)>,
    /// `β̂_S` with `Φ(t) ≈ C β̂_S^{t/T₀}`, fitted on `Φ(kT₀)`, `k ≥ 2`.
    pub fitted_decay: RateFit,
    pub fitted_derivative_decay: RateFit,
    pub t0: f64,
    /// `Φ(kT₀)` for `k = 0, 1, …`.
    pub envelope: Vec<f64>,
    pub derivative_envelope: Vec<f64>,
    pub exact_match: bool,
    pub compatibility_residual: f64,
}

impl StabilityReport {
    /// Whether `Φ((k+1)T₀) ≤ Φ(kT₀)` for every recorded `k ≥ from`.
    pub fn envelope_monotone_from(&self, from: usize) -> bool {
        self.envelope.iter().skip(from).collect::<Vec<_>>().windows(2).all(|w| w[1] <= w[0])
    }
}

fn x_derivative_sup(e: &[Vec<f64>], dx: f64) -> f64 {
    let nx = e.len() - 1;
    let n = e[0].len();
    let mut worst = 0.0_f64;
    for k in 0..=nx {
        for c in 0..n {
            let v = |kk: usize| e[kk][c];
            let d = if k == 0 {
                (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * dx)
            } else if k == nx {
                (3.0 * v(nx) - 4.0 * v(nx - 1) + v(nx - 2)) / (2.0 * dx)
            } else {
                (v(k + 1) - v(k - 1)) / (2.0 * dx)
            };
            worst = worst.max(d.abs());
        }
    }
    worst
}

/// Linear interpolation of a sampled series at `t`.
fn sample_at(samples: &[(f64, f64)], t: f64) -> Option<f64> {
    let idx = samples.partition_point(|s| s.0 < t);
    if idx < samples.len() && (samples[idx].0 - t).abs() <= 1e-9 * t.abs().max(1.0) {
        return Some(samples[idx].1);
    }
    if idx == 0 || idx >= samples.len() {
        return None;
    }
    let (a, b) = (samples[idx - 1], samples[idx]);
    Some(a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0))
}

fn envelope(samples: &[(f64, f64)], t0: f64) -> Vec<f64> {
    (0..).map_while(|k| sample_at(samples, k as f64 * t0)).collect()
}

/// `β̂ = exp(slope)` of `log env[k]` against `k` for `k ≥ 2`.
fn fit_decay(env: &[f64]) -> RateFit {
    let points: Vec<(f64, f64)> =
        env.iter().enumerate().skip(2).filter(|(_, v)| **v > PHI_FLOOR).map(|(k, v)| (k as f64, v.ln())).collect();
    if env.iter().skip(2).all(|v| *v <= PHI_FLOOR) && env.len() > 2 {
        return RateFit::ConvergedImmediately;
    }
    if points.len() < 3 {
        return RateFit::Insufficient;
    }
    log_linear_slope(&points).map_or(RateFit::Insufficient, |s| RateFit::Rate(s.exp()))
}

/// Deviation of `traj` from `periodic`, the `kT₀` envelope with
/// `T₀ = L·μ_max`, and the fitted per-`T₀` decay factors.
pub fn stability_metrics(traj: &Trajectory, periodic: &Field, spec: &SystemSpec) -> Result<StabilityReport> {
    if (traj.length - periodic.length).abs() > 1e-12 * traj.length {
        return Err(Error::InvalidArgument(format!(
            "trajectory on [0, {}] but periodic field on [0, {}]",
            traj.length, periodic.length
        )));
    }
    let q = traj.times.len();
    if q == 0 {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let n = spec.n;
    let nx = traj.profiles[0].len() - 1;
    let dx = traj.length / nx as f64;
    let mut u = vec![0.0; n];
    let deviations: Vec<Vec<Vec<f64>>> = traj
        .times
        .iter()
        .zip(&traj.profiles)
        .map(|(&t, prof)| {
            prof.iter()
                .enumerate()
                .map(|(k, v)| {
                    periodic.interpolate_into(t, k as f64 * dx, &mut u);
                    v.iter().zip(&u).map(|(a, b)| a - b).collect()
                })
                .collect()
        })
        .collect();
    let sup = |e: &[Vec<f64>]| e.iter().flatten().fold(0.0_f64, |a, b| a.max(b.abs()));

    let phi_samples: Vec<(f64, f64)> = traj.times.iter().zip(&deviations).map(|(t, e)| (*t, sup(e))).collect();
    let dphi_samples: Vec<(f64, f64)> = (0..q)
        .map(|s| {
            let dx_sup = if nx >= 2 { x_derivative_sup(&deviations[s], dx) } else { 0.0 };
            let dt_sup = if q < 2 {
                0.0
            } else {
                let (a, b) = if s == 0 {
                    (0, 1)
                } else if s + 1 == q {
                    (q - 2, q - 1)
                } else {
                    (s - 1, s + 1)
                };
                let h = traj.times[b] - traj.times[a];
                deviations[b]
                    .iter()
                    .flatten()
                    .zip(deviations[a].iter().flatten())
                    .fold(0.0_f64, |acc, (p, m)| acc.max(((p - m) / h).abs()))
            };
            (traj.times[s], dx_sup.max(dt_sup))
        })
        .collect();

    let t0 = traj.length * measure_mu_max(spec, DEFAULT_SAMPLES)?;
    let env = envelope(&phi_samples, t0);
    let denv = envelope(&dphi_samples, t0);
    Ok(StabilityReport {
        exact_match: phi_samples.iter().all(|p| p.1 <= PHI_FLOOR),
        fitted_decay: fit_decay(&env),
        fitted_derivative_decay: fit_decay(&denv),
        phi_samples,
        dphi_samples,
        t0,
        envelope: env,
        derivative_envelope: denv,
        compatibility_residual: traj.compatibility_residual,
    })
}

impl Report for StabilityReport {
    fn csv(&self) -> Option<String> {
        Some(csv_table(
            "t,phi,dphi",
            self.phi_samples
                .iter()
                .zip(&self.dphi_samples)
                .map(|(p, d)| vec![csv_real(p.0), csv_real(p.1), csv_real(d.1)]),
        ))
    }

    fn sidecar(&self) -> Option<serde_json::Value> {
        Some(serde_json::json!({
            "fitted_decay": self.fitted_decay,
            "fitted_derivative_decay": self.fitted_derivative_decay,
            "t0": self.t0,
            "envelope": self.envelope,
            "derivative_envelope": self.derivative_envelope,
            "exact_match": self.exact_match,
            "compatibility_residual": self.compatibility_residual,
        }))
    }
}

impl Report for Trajectory {}
