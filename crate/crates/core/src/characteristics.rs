//! Characteristic curves `t = t_i(x; t₀, x₀)`, solutions of
//! `dt/dx = μ_i(u(t, x))` through a frozen background field.

use crate::error::{Error, Result};
use crate::field::Field;
use crate::system::SystemSpec;

/// Samples of one characteristic. Times are stored unwrapped; reduction
/// modulo the period happens only when a field is looked up.
#[derive(Clone, Debug, PartialEq)]
pub struct CharacteristicTrace {
    /// Family index, 1-based.
    pub family: usize,
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
}

impl CharacteristicTrace {
    pub fn end(&self) -> (f64, f64) {
        (*self.ts.last().expect("trace is never empty"), *self.xs.last().expect("trace is never empty"))
    }
}

/// Fixed-step RK4 in `x` from `(t0, x0)` to `x_target`. The last step is
/// shortened so the trace ends exactly on `x_target`. `speed` returns
/// `dt/dx` at `(t, x)`; `negative` is the expected sign of the speed.
pub fn trace_with_speed<F>(
    mut speed: F,
    negative: bool,
    step: f64,
    t0: f64,
    x0: f64,
    x_target: f64,
    mut visit: impl FnMut(f64, f64),
) -> Result<()>
where
    F: FnMut(f64, f64) -> f64,
{
    let mut eval = |t: f64, x: f64| -> Result<f64> {
        let mu = speed(t, x);
        if !mu.is_finite() || (mu < 0.0) != negative || mu == 0.0 {
            return Err(Error::Signature {
                n: 0,
                expected_negative: usize::from(negative),
                found_negative: usize::from(mu < 0.0),
            });
        }
        Ok(mu)
    };
    let dist = x_target - x0;
    let dir = dist.signum();
    let count = ((dist.abs() / step) - 1e-9).ceil().max(0.0) as usize;
    let (mut t, mut x) = (t0, x0);
    visit(t, x);
    for q in 0..count {
        let next_x = if q + 1 == count { x_target } else { x0 + dir * step * (q + 1) as f64 };
        let s = next_x - x;
        let k1 = eval(t, x)?;
        let k2 = eval(t + 0.5 * s * k1, x + 0.5 * s)?;
        let k3 = eval(t + 0.5 * s * k2, x + 0.5 * s)?;
        let k4 = eval(t + s * k3, next_x)?;
        t += s * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        x = next_x;
        visit(t, x);
    }
    Ok(())
}

/// Traces family `i` (1-based) from `(t0, x0)` to `x_target` through
/// `field`, with speed `μ_i(u)` and RK4 step `L / (4 Nx)`.
pub fn trace_to(
    field: &Field,
    spec: &SystemSpec,
    i: usize,
    t0: f64,
    x0: f64,
    x_target: f64,
) -> Result<CharacteristicTrace> {
    if i == 0 || i > spec.n {
        return Err(Error::InvalidArgument(format!("family {i} out of range 1..={}", spec.n)));
    }
    for x in [x0, x_target] {
        if !(-1e-12..=field.length + 1e-12).contains(&x) {
            return Err(Error::Domain { norm: x, radius: field.length });
        }
    }
    let negative = i <= spec.m;
    let step = field.length / (4.0 * field.nx as f64);
    let mut u = vec![0.0; spec.n];
    let mut failure = None;
    let speed = |t: f64, x: f64| {
        field.interpolate_into(t, x, &mut u);
        match spec.eigen(&u) {
            Ok(e) => e.mus[i - 1],
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    };
    let mut trace = CharacteristicTrace { family: i, xs: Vec::new(), ts: Vec::new() };
    let res = trace_with_speed(speed, negative, step, t0, x0, x_target, |t, x| {
        trace.xs.push(x);
        trace.ts.push(t);
    });
    if let Some(e) = failure {
        return Err(e);
    }
    res?;
    Ok(trace)
}

/// Traces family `i` backwards to its inflow boundary: `x = 0` for the
/// positive families, `x = L` for the negative ones.
pub fn trace_characteristic(
    field: &Field,
    spec: &SystemSpec,
    i: usize,
    t0: f64,
    x0: f64,
) -> Result<CharacteristicTrace> {
    let target = if i <= spec.m { field.length } else { 0.0 };
    trace_to(field, spec, i, t0, x0, target)
}
