//! Norms, weight functions and the smallness certificate, residuals,
//! second-derivative measurements, and report serialization.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::system::{check_dominance, SystemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub c0: f64,
    pub c1: f64,
}

/// `c0 = max |u_i|`; `c1 = c0 + max(|∂_t u_i|, |∂_x u_i|)` by finite differences.
pub fn norms(field: &Field) -> Norms {
    let c0 = field.max_abs();
    let d = field.dt_field().max_abs().max(field.dx_field().max_abs());
    Norms { c0, c1: c0 + d }
}

/// Weight functions `W_r(x) = e^{g̃_rr (L−x)}` for the leftward families
/// and `W_s(x) = e^{−g̃_ss x}` for the rightward ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    pub rates: Vec<f64>,
    pub m: usize,
    pub length: f64,
    pub m3: f64,
}

impl WeightProfile {
    /// `W_i(x)`, `i` 0-based.
    pub fn eval(&self, i: usize, x: f64) -> f64 {
        if i < self.m {
            (self.rates[i] * (self.length - x)).exp()
        } else {
            (-self.rates[i] * x).exp()
        }
    }
}

pub fn weights(gtilde: &DMatrix<f64>, length: f64, n: usize, m: usize) -> Result<WeightProfile> {
    if gtilde.nrows() != n || gtilde.ncols() != n || m > n {
        return Err(Error::InvalidArgument(format!(
            "g̃ is {}x{}, expected {n}x{n} with m = {m}",
            gtilde.nrows(),
            gtilde.ncols()
        )));
    }
    check_dominance(gtilde, m, f64::NAN)?;
    let rates: Vec<f64> = (0..n).map(|i| gtilde[(i, i)]).collect();
    let profile = WeightProfile { rates, m, length, m3: 1.0 };
    let m3 = (0..n).map(|i| if i < m { profile.eval(i, 0.0) } else { profile.eval(i, length) }).fold(1.0_f64, f64::max);
    Ok(WeightProfile { m3, ..profile })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub theta: f64,
    pub k: f64,
    pub length: f64,
    pub m3: f64,
    pub ok: bool,
    pub margin: f64,
}

/// `θ + K·L·M₃ < 1`.
pub fn smallness_certificate(theta: f64, k: f64, length: f64, m3: f64) -> Certificate {
    let margin = 1.0 - theta - k * length * m3;
    Certificate { theta, k, length, m3, ok: margin > 0.0, margin }
}

/// `sup |∂_t u + A(u) ∂_x u − F(u)|` over the interior columns, with
/// central differences (periodic in `t`).
pub fn pde_residual(field: &Field, spec: &SystemSpec) -> f64 {
    let n = field.n;
    let (ht, hx) = (field.dt(), field.dx());
    let mut worst = 0.0_f64;
    let mut ux = vec![0.0; n];
    for j in 0..field.nt {
        for k in 1..field.nx {
            let u = field.node(j, k);
            let up = field.node_wrapped(j as i64 + 1, k);
            let down = field.node_wrapped(j as i64 - 1, k);
            let right = field.node(j, k + 1);
            let left = field.node(j, k - 1);
            for i in 0..n {
                ux[i] = (right[i] - left[i]) / (2.0 * hx);
            }
            let a = spec.coefficient(u);
            let f = spec.source(u);
            for i in 0..n {
                let mut r = (up[i] - down[i]) / (2.0 * ht) - f[i];
                for jj in 0..n {
                    r += a[(i, jj)] * ux[jj];
                }
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}

/// Sup norms of the second differences. `grid_pair_ratio` holds
/// fine/coarse ratios when two resolutions were compared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub d2t: f64,
    pub dtdx: f64,
    pub d2x: f64,
    pub grid_pair_ratio: Option<[f64; 3]>,
}

/// Second differences, periodic in `t`; in `x` only interior stencils are
/// used, so the first and last columns are skipped.
pub fn regularity_measurements(field: &Field) -> RegularityReport {
    let (ht, hx) = (field.dt(), field.dx());
    let (mut d2t, mut dtdx, mut d2x) = (0.0_f64, 0.0_f64, 0.0_f64);
    for j in 0..field.nt {
        let jp = j as i64 + 1;
        let jm = j as i64 - 1;
        for k in 1..field.nx {
            for i in 0..field.n {
                let c = field.node(j, k)[i];
                let tt = field.node_wrapped(jp, k)[i] - 2.0 * c + field.node_wrapped(jm, k)[i];
                let xx = field.node(j, k + 1)[i] - 2.0 * c + field.node(j, k - 1)[i];
                let tx = field.node_wrapped(jp, k + 1)[i]
                    - field.node_wrapped(jp, k - 1)[i]
                    - field.node_wrapped(jm, k + 1)[i]
                    + field.node_wrapped(jm, k - 1)[i];
                d2t = d2t.max((tt / (ht * ht)).abs());
                d2x = d2x.max((xx / (hx * hx)).abs());
                dtdx = dtdx.max((tx / (4.0 * ht * hx)).abs());
            }
        }
    }
    RegularityReport { d2t, dtdx, d2x, grid_pair_ratio: None }
}

/// Measurements on the finer field, with fine/coarse ratios attached.
pub fn regularity_pair(coarse: &Field, fine: &Field) -> RegularityReport {
    let c = regularity_measurements(coarse);
    let f = regularity_measurements(fine);
    let ratio = |a: f64, b: f64| if a == 0.0 && b == 0.0 { 1.0 } else { b / a };
    RegularityReport { grid_pair_ratio: Some([ratio(c.d2t, f.d2t), ratio(c.dtdx, f.dtdx), ratio(c.d2x, f.d2x)]), ..f }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Something [`emit_report`] can write.
pub trait Report: Serialize {
    /// The time or iteration series, when the report has one.
    fn csv(&self) -> Option<String> {
        None
    }

    /// Scalar record written next to the CSV (`<dest>.json`).
    fn sidecar(&self) -> Option<serde_json::Value> {
        None
    }
}

/// Reals in CSV carry 17 significant digits.
pub fn csv_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn csv_table(header: &str, rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `report` as CSV (plus a JSON sidecar when the report has scalar
/// results) or as a single JSON document.
pub fn emit_report<R: Report + ?Sized>(report: &R, format: Format, destination: &Path) -> Result<()> {
    match format {
        Format::Json => {
            let text = serde_json::to_string_pretty(report).expect("reports hold only plain data");
            write_file(destination, &text)
        }
        Format::Csv => {
            let table = report
                .csv()
                .ok_or_else(|| Error::InvalidArgument("report has no tabular series; use the json format".into()))?;
            write_file(destination, &table)?;
            if let Some(side) = report.sidecar() {
                let text = serde_json::to_string_pretty(&side).expect("json values always serialize");
                write_file(&sidecar_path(destination), &text)?;
            }
            Ok(())
        }
    }
}

impl Report for crate::periodic::IterationReport {
    fn csv(&self) -> Option<String> {
        Some(csv_table(
            "iteration,delta",
            self.deltas.iter().enumerate().map(|(l, d)| vec![(l + 1).to_string(), csv_real(*d)]),
        ))
    }

    fn sidecar(&self) -> Option<serde_json::Value> {
        Some(serde_json::json!({
            "fitted_beta": self.fitted_beta,
            "iterations": self.iterations,
            "converged": self.converged,
            "certificate": self.certificate,
        }))
    }
}

impl Report for Certificate {}
impl Report for Norms {}
impl Report for RegularityReport {}
impl Report for WeightProfile {}
