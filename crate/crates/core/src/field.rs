//! Grid functions on `[0, T*) × [0, L]`, periodic in time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values `u(t_j, x_k)` with `t_j = j·T*/Nt` (`j = 0..Nt−1`, wrapping) and
/// `x_k = k·L/Nx` (`k = 0..Nx`). Storage is row-major in `(j, k)` with the
/// `n` components contiguous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub nt: usize,
    pub nx: usize,
    pub n: usize,
    pub period: f64,
    pub length: f64,
    values: Vec<f64>,
}

const SNAP: f64 = 1e-12;

/// Cell index and fractional offset along one axis.
#[inline]
fn split(pos: f64) -> (i64, f64) {
    let fl = pos.floor();
    let frac = pos - fl;
    if frac > 1.0 - SNAP {
        (fl as i64 + 1, 0.0)
    } else if frac < SNAP {
        (fl as i64, 0.0)
    } else {
        (fl as i64, frac)
    }
}

/// Bilinear stencil: the two rows, two columns and their weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil {
    pub j0: usize,
    pub j1: usize,
    pub k0: usize,
    pub k1: usize,
    pub wt: f64,
    pub wx: f64,
}

impl Field {
    pub fn zeros(nt: usize, nx: usize, n: usize, period: f64, length: f64) -> Self {
        assert!(nt > 0 && nx > 0 && n > 0, "grid sizes must be positive");
        Self { nt, nx, n, period, length, values: vec![0.0; nt * (nx + 1) * n] }
    }

    /// Samples `f(t, x, out)` at every node.
    pub fn from_fn<F>(nt: usize, nx: usize, n: usize, period: f64, length: f64, f: F) -> Self
    where
        F: Fn(f64, f64, &mut [f64]),
    {
        let mut field = Self::zeros(nt, nx, n, period, length);
        for j in 0..nt {
            for k in 0..=nx {
                let (t, x) = (field.t(j), field.x(k));
                f(t, x, field.node_mut(j, k));
            }
        }
        field
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        self.nt == other.nt
            && self.nx == other.nx
            && self.n == other.n
            && self.period == other.period
            && self.length == other.length
    }

    pub fn dt(&self) -> f64 {
        self.period / self.nt as f64
    }

    pub fn dx(&self) -> f64 {
        self.length / self.nx as f64
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.period / self.nt as f64
    }

    pub fn x(&self, k: usize) -> f64 {
        k as f64 * self.length / self.nx as f64
    }

    #[inline]
    fn offset(&self, j: usize, k: usize) -> usize {
        ((j % self.nt) * (self.nx + 1) + k) * self.n
    }

    /// Node `(j mod Nt, k)`.
    #[inline]
    pub fn node(&self, j: usize, k: usize) -> &[f64] {
        let o = self.offset(j, k);
        &self.values[o..o + self.n]
    }

    pub fn node_mut(&mut self, j: usize, k: usize) -> &mut [f64] {
        let o = self.offset(j, k);
        &mut self.values[o..o + self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Node `(j, k)` with the row index wrapped modulo `Nt`, negative allowed.
    #[inline]
    pub fn node_wrapped(&self, j: i64, k: usize) -> &[f64] {
        self.node(j.rem_euclid(self.nt as i64) as usize, k)
    }

    /// The profile `u(t_j, ·)` as `Nx + 1` states.
    pub fn row(&self, j: usize) -> Vec<Vec<f64>> {
        (0..=self.nx).map(|k| self.node(j, k).to_vec()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
    }

    pub fn max_node_norm(&self) -> f64 {
        self.values.chunks_exact(self.n).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    /// `max_{i,j,k} |u_i − v_i|` over shared nodes.
    pub fn sup_diff(&self, other: &Field) -> f64 {
        assert!(self.same_grid(other), "fields live on different grids");
        self.values.iter().zip(&other.values).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()))
    }

    #[inline]
    pub(crate) fn stencil(&self, t: f64, x: f64) -> Stencil {
        let (j, wt) = split(t / self.period * self.nt as f64);
        let j0 = j.rem_euclid(self.nt as i64) as usize;
        let j1 = if j0 + 1 == self.nt { 0 } else { j0 + 1 };
        let (k, wx) = split((x / self.length * self.nx as f64).clamp(0.0, self.nx as f64));
        let (k0, wx) = if k as usize >= self.nx { (self.nx - 1, 1.0) } else { (k as usize, wx) };
        Stencil { j0, j1, k0, k1: k0 + 1, wt, wx }
    }

    /// Component `i` at `(t, x)` through a precomputed stencil.
    #[inline]
    pub(crate) fn at(&self, s: &Stencil, i: usize) -> f64 {
        let a = self.values[self.offset(s.j0, s.k0) + i];
        let b = self.values[self.offset(s.j0, s.k1) + i];
        let c = self.values[self.offset(s.j1, s.k0) + i];
        let d = self.values[self.offset(s.j1, s.k1) + i];
        let lo = a + s.wx * (b - a);
        let hi = c + s.wx * (d - c);
        lo + s.wt * (hi - lo)
    }

    fn check_x(&self, x: f64) -> Result<()> {
        if !(x >= -SNAP && x <= self.length + SNAP) {
            return Err(Error::Domain { norm: x, radius: self.length });
        }
        Ok(())
    }

    /// Bilinear interpolation with periodic wrap in `t`; exact at nodes.
    pub fn interpolate(&self, t: f64, x: f64) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let s = self.stencil(t, x);
        Ok((0..self.n).map(|i| self.at(&s, i)).collect())
    }

    pub fn interpolate_into(&self, t: f64, x: f64, out: &mut [f64]) {
        let s = self.stencil(t, x);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.at(&s, i);
        }
    }

    /// Central differences in `t` (periodic).
    pub fn dt_field(&self) -> Field {
        let mut out = Field::zeros(self.nt, self.nx, self.n, self.period, self.length);
        let inv = 1.0 / (2.0 * self.dt());
        for j in 0..self.nt {
            for k in 0..=self.nx {
                let up = self.node_wrapped(j as i64 + 1, k);
                let down = self.node_wrapped(j as i64 - 1, k);
                let o = out.node_mut(j, k);
                for i in 0..self.n {
                    o[i] = (up[i] - down[i]) * inv;
                }
            }
        }
        out
    }

    /// Central differences in `x`, one-sided second order at `x = 0, L`.
    pub fn dx_field(&self) -> Field {
        let mut out = Field::zeros(self.nt, self.nx, self.n, self.period, self.length);
        let h = self.dx();
        let nx = self.nx;
        for j in 0..self.nt {
            for k in 0..=nx {
                for i in 0..self.n {
                    let u = |kk: usize| self.node(j, kk)[i];
                    out.node_mut(j, k)[i] = if nx == 1 {
                        (u(1) - u(0)) / h
                    } else if k == 0 {
                        (-3.0 * u(0) + 4.0 * u(1) - u(2)) / (2.0 * h)
                    } else if k == nx {
                        (3.0 * u(nx) - 4.0 * u(nx - 1) + u(nx - 2)) / (2.0 * h)
                    } else {
                        (u(k + 1) - u(k - 1)) / (2.0 * h)
                    };
                }
            }
        }
        out
    }

    pub fn interpolate_dt(&self, t: f64, x: f64) -> Result<Vec<f64>> {
        self.dt_field().interpolate(t, x)
    }

    pub fn interpolate_dx(&self, t: f64, x: f64) -> Result<Vec<f64>> {
        self.dx_field().interpolate(t, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn nodes_are_reproduced_exactly() {
        let f = Field::from_fn(16, 10, 2, 1.0, 2.0, |t, x, o| {
            o[0] = (TAU * t).sin() + x;
            o[1] = t * x;
        });
        for j in 0..16 {
            for k in 0..=10 {
                let v = f.interpolate(f.t(j), f.x(k)).unwrap();
                assert_eq!(v.as_slice(), f.node(j, k));
            }
        }
        // the seam: t = T* is row 0 again
        assert_eq!(f.interpolate(1.0, 0.4).unwrap(), f.interpolate(0.0, 0.4).unwrap());
        assert_eq!(f.interpolate(-0.25, 0.4).unwrap(), f.interpolate(0.75, 0.4).unwrap());
    }

    #[test]
    fn constant_field_is_constant() {
        let f = Field::from_fn(8, 8, 1, 2.0, 1.0, |_, _, o| o[0] = 0.37);
        for (t, x) in [(0.1, 0.2), (1.93, 1.0), (-5.3, 0.0), (7.77, 0.5)] {
            assert!((f.interpolate(t, x).unwrap()[0] - 0.37).abs() < 1e-15);
        }
    }

    #[test]
    fn bilinear_accuracy_on_smooth_field() {
        let f = Field::from_fn(256, 256, 1, 1.0, 1.0, |t, x, o| o[0] = (TAU * t).sin() * x);
        let v = f.interpolate(0.3, 0.5).unwrap()[0];
        assert!((v - (0.6 * std::f64::consts::PI).sin() * 0.5).abs() < 1e-3);
    }

    #[test]
    fn out_of_range_x_is_rejected() {
        let f = Field::zeros(8, 8, 1, 1.0, 1.0);
        assert!(f.interpolate(0.0, 1.0 + 1e-9).is_err());
        assert!(f.interpolate(0.0, -1e-9).is_err());
        assert!(f.interpolate(0.0, 1.0 + 1e-13).is_ok());
    }

    #[test]
    fn derivative_fields_are_second_order() {
        let exact_dx = |t: f64, x: f64| 3.0 * (TAU * t).sin() * (3.0 * x).cos();
        let mut errs = Vec::new();
        for nx in [32, 64] {
            let f = Field::from_fn(nx, nx, 1, 1.0, 1.0, |t, x, o| o[0] = (TAU * t).sin() * (3.0 * x).sin());
            let dx = f.dx_field();
            let dt = f.dt_field();
            let mut e: f64 = 0.0;
            for j in 0..nx {
                for k in 0..=nx {
                    let (t, x) = (f.t(j), f.x(k));
                    e = e.max((dx.node(j, k)[0] - exact_dx(t, x)).abs());
                    e = e.max((dt.node(j, k)[0] - TAU * (TAU * t).cos() * (3.0 * x).sin()).abs());
                }
            }
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 3.5, "{errs:?}");
    }
}
