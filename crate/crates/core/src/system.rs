//! The quasilinear system `u_t + A(u) u_x = F(u)` on `[0, L]`, its
//! structural hypotheses, and the algebraic objects the iteration is built
//! from: the normalized eigenstructure, the coupling matrix `B(u)`, the
//! split source linearization `g̃` and the nonlinear remainder `g̃^NL`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::sample_ball;

pub type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;
pub const BIORTHONORMAL_TOL: f64 = 1e-10;
pub const ORIGIN_TOL: f64 = 1e-12;
pub const DEFAULT_K_SLACK: f64 = 1e-6;
pub const DEFAULT_SAMPLES: usize = 256;

/// A quasilinear hyperbolic system together with the neighbourhood `U`
/// (a ball of radius `domain_radius` around the origin) on which the
/// hypotheses are required to hold.
#[derive(Clone)]
pub struct SystemSpec {
    pub n: usize,
    pub m: usize,
    pub domain_radius: f64,
    pub length: f64,
    coefficient: MatrixFn,
    source: VectorFn,
    source_jacobian: Option<MatrixFn>,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("domain_radius", &self.domain_radius)
            .field("length", &self.length)
            .field("analytic_jacobian", &self.source_jacobian.is_some())
            .finish()
    }
}

impl SystemSpec {
    pub fn new<A, F>(n: usize, m: usize, coefficient: A, source: F, domain_radius: f64, length: f64) -> Result<Self>
    where
        A: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        F: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        if n == 0 || m > n {
            return Err(Error::InvalidArgument(format!("need n >= 1 and m <= n, got n={n}, m={m}")));
        }
        if !(domain_radius > 0.0 && domain_radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("domain radius must be positive, got {domain_radius}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidArgument(format!("interval length must be positive, got {length}")));
        }
        Ok(Self {
            n,
            m,
            domain_radius,
            length,
            coefficient: Arc::new(coefficient),
            source: Arc::new(source),
            source_jacobian: None,
        })
    }

    pub fn with_source_jacobian<G>(mut self, jacobian: G) -> Self
    where
        G: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.source_jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn coefficient(&self, u: &[f64]) -> DMatrix<f64> {
        (self.coefficient)(u)
    }

    pub fn source(&self, u: &[f64]) -> DVector<f64> {
        (self.source)(u)
    }

    /// `∇F(u)`: the analytic Jacobian when one was supplied, otherwise
    /// 4th-order central differences with step `1e-5·max(1, |u|)`.
    pub fn source_jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        if let Some(jac) = &self.source_jacobian {
            return jac(u);
        }
        let n = self.n;
        let h = 1e-5 * norm(u).max(1.0);
        let mut out = DMatrix::zeros(n, n);
        let mut x = u.to_vec();
        for j in 0..n {
            let orig = x[j];
            let mut eval = |shift: f64| {
                x[j] = orig + shift;
                self.source(&x)
            };
            let fp2 = eval(2.0 * h);
            let fp1 = eval(h);
            let fm1 = eval(-h);
            let fm2 = eval(-2.0 * h);
            x[j] = orig;
            let col = (-fp2 + fp1 * 8.0 - fm1 * 8.0 + fm2) / (12.0 * h);
            out.set_column(j, &col);
        }
        out
    }

    pub fn eigen(&self, u: &[f64]) -> Result<EigenStructure> {
        eigen_decompose(&self.coefficient(u), self.m)
    }

    pub fn check_domain(&self, u: &[f64]) -> Result<()> {
        let r = norm(u);
        if r > self.domain_radius || !r.is_finite() {
            return Err(Error::Domain { norm: r, radius: self.domain_radius });
        }
        Ok(())
    }

    /// Multiplies `A` and `F` by `sigma`, which corresponds to the new time
    /// `τ = t / sigma`. Forcing periods must be divided by `sigma` as well.
    pub fn scaled(&self, sigma: f64) -> Self {
        let a = self.coefficient.clone();
        let f = self.source.clone();
        let mut out = self.clone();
        out.coefficient = Arc::new(move |u| a(u) * sigma);
        out.source = Arc::new(move |u| f(u) * sigma);
        if let Some(j) = self.source_jacobian.clone() {
            out.source_jacobian = Some(Arc::new(move |u| j(u) * sigma));
        }
        out
    }
}

pub(crate) fn norm(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Eigenvalues, left/right eigenvectors and inverse speeds at one state.
///
/// Families are ordered negative speeds first (ascending), then positive
/// (ascending). Right eigenvectors have unit length with their
/// largest-magnitude entry positive; left eigenvectors are the rows of the
/// inverse, so `l_i · r_j = δ_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenStructure {
    pub lambdas: Vec<f64>,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub mus: Vec<f64>,
}

impl EigenStructure {
    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    pub fn biorthonormality_error(&self) -> f64 {
        let prod = &self.left * &self.right;
        let n = self.n();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Max over families of `|A r_i − λ_i r_i|` and `|l_i A − λ_i l_i|`.
    pub fn eigen_residual(&self, a: &DMatrix<f64>) -> f64 {
        let n = self.n();
        let mut worst = 0.0_f64;
        for i in 0..n {
            let r = self.right.column(i);
            let l = self.left.row(i);
            let rr = a * r - r * self.lambdas[i];
            let lr = l * a - l * self.lambdas[i];
            worst = worst.max(rr.amax()).max(lr.amax());
        }
        worst
    }

    /// `B_ij = −l_ij / l_ii` off the diagonal, zero on it.
    pub fn coupling(&self) -> Result<DMatrix<f64>> {
        let n = self.n();
        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            let lii = self.left[(i, i)];
            if lii.abs() < 1e-12 {
                return Err(Error::DegenerateEigenbasis { index: i + 1, value: lii });
            }
            for j in 0..n {
                if j != i {
                    b[(i, j)] = -self.left[(i, j)] / lii;
                }
            }
        }
        Ok(b)
    }
}

pub fn eigen_decompose(a: &DMatrix<f64>, m: usize) -> Result<EigenStructure> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "coefficient matrix must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Hyperbolicity("non-finite coefficient matrix".into()));
    }
    let scale = a.amax().max(1e-300);

    let is_diagonal = (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] == 0.0));
    let (lambdas, right) = if is_diagonal { diagonal_eigen(a) } else { general_eigen(a, scale)? };

    for w in lambdas.windows(2) {
        if (w[1] - w[0]).abs() <= 1e-10 * scale {
            return Err(Error::Hyperbolicity(format!("repeated eigenvalue {}", w[0])));
        }
    }
    if let Some(z) = lambdas.iter().find(|l| l.abs() <= 1e-12 * scale.max(1.0)) {
        return Err(Error::Hyperbolicity(format!("zero eigenvalue {z:e}")));
    }
    let negatives = lambdas.iter().filter(|l| **l < 0.0).count();
    if negatives != m {
        return Err(Error::Signature { n, expected_negative: m, found_negative: negatives });
    }

    let left = right
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Hyperbolicity("eigenvectors are linearly dependent".into()))?;
    let mus = lambdas.iter().map(|l| 1.0 / l).collect();
    Ok(EigenStructure { lambdas, left, right, mus })
}

fn diagonal_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let lambdas = order.iter().map(|&i| a[(i, i)]).collect();
    let mut right = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        right[(i, col)] = 1.0;
    }
    (lambdas, right)
}

fn general_eigen(a: &DMatrix<f64>, scale: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let eig = a.clone().schur().complex_eigenvalues();
    let mut lambdas = Vec::with_capacity(n);
    for z in eig.iter() {
        if z.im.abs() > 1e-10 * scale {
            return Err(Error::Hyperbolicity(format!("complex eigenvalue {} + {}i", z.re, z.im)));
        }
        lambdas.push(z.re);
    }
    lambdas.sort_by(f64::total_cmp);

    let mut right = DMatrix::zeros(n, n);
    for (col, &lambda) in lambdas.iter().enumerate() {
        let shifted = a - DMatrix::identity(n, n) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::Hyperbolicity("svd failed".into()))?;
        let (k, _) = svd.singular_values.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).expect("non-empty");
        let mut r: DVector<f64> = v_t.row(k).transpose();
        // one step of inverse iteration sharpens the null vector
        let regularized = a - DMatrix::identity(n, n) * (lambda + 1e-14 * scale);
        if let Some(inv) = regularized.try_inverse() {
            let refined = inv * &r;
            if refined.iter().all(|v| v.is_finite()) && refined.norm() > 0.0 {
                r = refined;
            }
        }
        r /= r.norm();
        // ties (within roundoff) go to the first entry
        let peak = r.amax();
        let imax = r.iter().position(|v| v.abs() >= peak - 1e-12).expect("non-empty");
        if r[imax] < 0.0 {
            r = -r;
        }
        right.set_column(col, &r);
    }
    Ok((lambdas, right))
}

pub fn coupling_b(spec: &SystemSpec, u: &[f64]) -> Result<DMatrix<f64>> {
    spec.eigen(u)?.coupling()
}

/// Smallest `K ≥ 0` for which every row satisfies
/// `(−g_ii) − Σ_{j≠i} |g_ij| ≥ −K`; any larger `K` makes it strict.
pub fn minimal_k(g0: &DMatrix<f64>) -> f64 {
    let n = g0.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| g0[(i, j)].abs()).sum();
        worst = worst.max(g0[(i, i)] + off);
    }
    worst
}

/// `g̃_ij = μ_i(0) g_ij(0)` for `j ≠ i`, `g̃_ii = μ_i(0)(g_ii(0) − K)`,
/// rejected unless the row dominance conditions hold strictly.
pub fn gtilde_matrix(spec: &SystemSpec, k: f64) -> Result<DMatrix<f64>> {
    let origin = vec![0.0; spec.n];
    let mu0 = spec.eigen(&origin)?.mus;
    let g0 = spec.source_jacobian(&origin);
    gtilde_from_parts(&g0, &mu0, spec.m, k)
}

pub(crate) fn gtilde_from_parts(g0: &DMatrix<f64>, mu0: &[f64], m: usize, k: f64) -> Result<DMatrix<f64>> {
    if !(k >= 0.0) {
        return Err(Error::InvalidArgument(format!("K must be nonnegative, got {k}")));
    }
    let n = g0.nrows();
    let mut gt = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            gt[(i, j)] = if i == j { mu0[i] * (g0[(i, i)] - k) } else { mu0[i] * g0[(i, j)] };
        }
    }
    check_dominance(&gt, m, k)?;
    Ok(gt)
}

pub(crate) fn check_dominance(gt: &DMatrix<f64>, m: usize, k: f64) -> Result<()> {
    let n = gt.nrows();
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| gt[(i, j)].abs()).sum();
        let diag = if i < m { gt[(i, i)] } else { -gt[(i, i)] };
        if !(diag > off) {
            return Err(Error::Dominance { family: i + 1, k });
        }
    }
    Ok(())
}

/// `g̃_i^NL(u) = μ_i(u) f_i(u) − Σ_j μ_i(0) g_ij(0) u_j − Σ_j B_ij(u) μ_i(u) f_j(u)`.
///
/// The `K μ_i(0) u_i` part of the split is not included here; the
/// iteration adds it back explicitly.
pub fn g_nonlinear(spec: &SystemSpec, u: &[f64]) -> Result<DVector<f64>> {
    let origin = vec![0.0; spec.n];
    let mu0 = spec.eigen(&origin)?.mus;
    let g0 = spec.source_jacobian(&origin);
    spec.check_domain(u)?;
    let eig = spec.eigen(u)?;
    nonlinear_remainder(spec, &g0, &mu0, &eig, u)
}

pub(crate) fn nonlinear_remainder(
    spec: &SystemSpec,
    g0: &DMatrix<f64>,
    mu0: &[f64],
    eig: &EigenStructure,
    u: &[f64],
) -> Result<DVector<f64>> {
    let n = spec.n;
    let f = spec.source(u);
    let b = eig.coupling()?;
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let mu = eig.mus[i];
        let mut linear = 0.0;
        let mut coupled = 0.0;
        for j in 0..n {
            linear += g0[(i, j)] * u[j];
            coupled += b[(i, j)] * f[j];
        }
        out[i] = mu * f[i] - mu0[i] * linear - mu * coupled;
    }
    Ok(out)
}

/// Source linearization at the origin with the splitting constant `K`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SourceLinearization {
    pub g0: Vec<Vec<f64>>,
    pub k: f64,
    pub k_min: f64,
    pub gtilde: Vec<Vec<f64>>,
    pub mu0: Vec<f64>,
    pub mu_max: f64,
}

impl SourceLinearization {
    /// `k = None` selects `minimal_k(g0) + 1e-6`.
    pub fn new(spec: &SystemSpec, k: Option<f64>) -> Result<Self> {
        let origin = vec![0.0; spec.n];
        let g0 = spec.source_jacobian(&origin);
        let mu0 = spec.eigen(&origin)?.mus;
        let k_min = minimal_k(&g0);
        let k = k.unwrap_or(k_min + DEFAULT_K_SLACK);
        let gt = gtilde_from_parts(&g0, &mu0, spec.m, k)?;
        let mu_max = measure_mu_max(spec, DEFAULT_SAMPLES)?;
        Ok(Self { g0: to_rows(&g0), k, k_min, gtilde: to_rows(&gt), mu0, mu_max })
    }

    pub fn g0_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.g0)
    }

    pub fn gtilde_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.gtilde)
    }

    pub fn g_nonlinear(&self, spec: &SystemSpec, eig: &EigenStructure, u: &[f64]) -> Result<DVector<f64>> {
        nonlinear_remainder(spec, &self.g0_matrix(), &self.mu0, eig, u)
    }
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, c, |i, j| rows[i][j])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicityReport {
    pub samples: usize,
    pub signature_constant: bool,
    pub mu_max: f64,
    pub a0_diagonal: bool,
    pub source_origin_residual: f64,
    pub max_biorthonormality_error: f64,
    pub max_eigen_residual: f64,
    pub needs_rescaling: bool,
}

impl HyperbolicityReport {
    pub fn all_hold(&self) -> bool {
        self.signature_constant && self.a0_diagonal && !self.needs_rescaling
    }
}

/// Samples `U` on a low-discrepancy point set plus the origin and checks the
/// structural hypotheses. A signature flip or a nonzero `F(0)` is an error;
/// the remaining findings are reported as flags.
pub fn validate_hyperbolicity(spec: &SystemSpec, samples: usize) -> Result<HyperbolicityReport> {
    let origin = vec![0.0; spec.n];
    let f0 = spec.source(&origin).amax();
    if f0 > ORIGIN_TOL {
        return Err(Error::SourceOrigin(f0));
    }
    let a0 = spec.coefficient(&origin);
    let mut a0_diagonal = true;
    for i in 0..spec.n {
        for j in 0..spec.n {
            if i != j && a0[(i, j)].abs() > ORIGIN_TOL {
                a0_diagonal = false;
            }
        }
    }
    // families are indexed by variable, so A(0) must also be ordered
    for i in 1..spec.n {
        if a0[(i - 1, i - 1)] >= a0[(i, i)] {
            a0_diagonal = false;
        }
    }

    let mut mu_max = 0.0_f64;
    let mut bio = 0.0_f64;
    let mut resid = 0.0_f64;
    let mut points = sample_ball(spec.n, spec.domain_radius, samples);
    points.push(origin);
    for u in &points {
        let a = spec.coefficient(u);
        let eig = eigen_decompose(&a, spec.m)?;
        for mu in &eig.mus {
            mu_max = mu_max.max(mu.abs());
        }
        bio = bio.max(eig.biorthonormality_error());
        resid = resid.max(eig.eigen_residual(&a) / a.amax().max(1.0));
    }
    Ok(HyperbolicityReport {
        samples: points.len(),
        signature_constant: true,
        mu_max,
        a0_diagonal,
        source_origin_residual: f0,
        max_biorthonormality_error: bio,
        max_eigen_residual: resid,
        needs_rescaling: mu_max > 1.0 + 1e-12,
    })
}

pub fn measure_mu_max(spec: &SystemSpec, samples: usize) -> Result<f64> {
    let mut points = sample_ball(spec.n, spec.domain_radius, samples);
    points.push(vec![0.0; spec.n]);
    let mut mu_max = 0.0_f64;
    for u in &points {
        for mu in spec.eigen(u)?.mus {
            mu_max = mu_max.max(mu.abs());
        }
    }
    Ok(mu_max)
}

/// Rescales time so that `μ_max ≤ 1`. Returns the scaled system and the
/// factor `σ` applied to `A` and `F`; forcing periods must be divided by
/// `σ` (see `BoundarySpec::time_scaled`). When `μ_max ≤ 1` already the
/// system is returned unchanged with `σ = 1`.
pub fn rescale_time(spec: &SystemSpec) -> Result<(SystemSpec, f64)> {
    let mu_max = measure_mu_max(spec, DEFAULT_SAMPLES)?;
    if !mu_max.is_finite() {
        return Err(Error::Hyperbolicity("unbounded inverse speed".into()));
    }
    if mu_max <= 1.0 {
        return Ok((spec.clone(), 1.0));
    }
    Ok((spec.scaled(mu_max), mu_max))
}

/// The constant change of variables `v = L(0) u` that diagonalizes `A(0)`.
/// Returned as `(L(0), R(0))`; applying it is left to the caller because it
/// also transforms `F` and the boundary maps.
pub fn diagonalizing_transform(spec: &SystemSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = spec.eigen(&vec![0.0; spec.n])?;
    Ok((eig.left, eig.right))
}
