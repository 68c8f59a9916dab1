//! Correlation kernels, correlation matrices and the trend basis.
//!
//! Models work on unit-cube coordinates. A [`Domain`] maps physical points to
//! the unit cube and back; kernels and trends only ever see scaled inputs.

use std::cell::Cell;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Starting nugget added to the diagonal of every correlation matrix.
pub const NUGGET_START: f64 = 1e-10;
/// Largest nugget tried before giving up on a factorization.
pub const NUGGET_MAX: f64 = 1e-6;

const DOMAIN_TOL: f64 = 1e-12;

thread_local! {
    static FACTORIZATIONS: Cell<usize> = const { Cell::new(0) };
}

/// Number of n×n correlation-matrix factorizations performed on this thread.
pub fn factorizations_on_current_thread() -> usize {
    FACTORIZATIONS.with(|c| c.get())
}

/// Axis-aligned box of physical input ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::Argument("domain needs at least one dimension".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if let Some(m) = (0..lower.len()).find(|&m| !(lower[m] < upper[m])) {
            return Err(Error::Argument(format!(
                "lower bound {} not below upper bound {} on axis {m}",
                lower[m], upper[m]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn unit_cube(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        for (m, &v) in x.iter().enumerate() {
            let span = self.upper[m] - self.lower[m];
            let tol = DOMAIN_TOL * span.max(1.0);
            if !v.is_finite() || v < self.lower[m] - tol || v > self.upper[m] + tol {
                return Err(Error::Domain {
                    coord: m,
                    value: v,
                    lower: self.lower[m],
                    upper: self.upper[m],
                });
            }
        }
        Ok(())
    }

    /// Affine map of a physical point onto `[0,1]^d`.
    pub fn to_unit(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(x.iter()
            .enumerate()
            .map(|(m, &v)| ((v - self.lower[m]) / (self.upper[m] - self.lower[m])).clamp(0.0, 1.0))
            .collect())
    }

    /// Inverse of [`Domain::to_unit`].
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(m, &v)| self.lower[m] + v * (self.upper[m] - self.lower[m]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    #[serde(rename = "squared-exponential")]
    SquaredExponential,
    #[serde(rename = "matern-5/2")]
    Matern52,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "squared-exponential",
            KernelFamily::Matern52 => "matern-5/2",
        }
    }
}

/// Stationary product-form correlation with per-axis length-scales.
///
/// Squared exponential: `r = exp(-Σ (h_m/θ_m)²)`.
/// Matérn 5/2: `r = (1 + √5 ρ + 5ρ²/3) exp(-√5 ρ)` with `ρ² = Σ (h_m/θ_m)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationKernel {
    pub family: KernelFamily,
    theta: Vec<f64>,
}

impl CorrelationKernel {
    pub fn new(family: KernelFamily, theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::Argument("kernel needs at least one length-scale".into()));
        }
        if let Some(t) = theta.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::Argument(format!("length-scale {t} is not positive")));
        }
        Ok(Self { family, theta })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Product of the length-scales, the "volume of influence" of one point.
    pub fn volume(&self) -> f64 {
        self.theta.iter().product()
    }

    pub fn correlation(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), y.len())?;
        Ok(self.corr(x, y))
    }

    /// Correlation without dimension checks.
    #[inline]
    pub(crate) fn corr(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for m in 0..self.theta.len() {
            let h = (x[m] - y[m]) / self.theta[m];
            s += h * h;
        }
        self.profile(s)
    }

    /// Correlation as a function of the scaled squared distance.
    #[inline]
    fn profile(&self, s: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => (-s).exp(),
            KernelFamily::Matern52 => {
                let rho = (5.0 * s).sqrt();
                (1.0 + rho + rho * rho / 3.0) * (-rho).exp()
            }
        }
    }

    /// Correlation and its derivatives with respect to `ln θ_m`.
    pub(crate) fn corr_with_log_grad(&self, x: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.theta.len();
        let mut s = 0.0;
        for m in 0..d {
            let h = (x[m] - y[m]) / self.theta[m];
            grad[m] = h * h;
            s += grad[m];
        }
        match self.family {
            KernelFamily::SquaredExponential => {
                let r = (-s).exp();
                for g in grad.iter_mut() {
                    *g *= 2.0 * r;
                }
                r
            }
            KernelFamily::Matern52 => {
                let rho = (5.0 * s).sqrt();
                let e = (-rho).exp();
                let factor = 5.0 / 3.0 * (1.0 + rho) * e;
                for g in grad.iter_mut() {
                    *g *= factor;
                }
                (1.0 + rho + rho * rho / 3.0) * e
            }
        }
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(self.family, theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrendKind {
    Constant,
    Linear,
}

/// Regression functions `f(x)` of the kriging mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendBasis {
    pub kind: TrendKind,
    pub dim: usize,
}

impl TrendBasis {
    pub fn new(kind: TrendKind, dim: usize) -> Self {
        Self { kind, dim }
    }

    pub fn constant(dim: usize) -> Self {
        Self::new(TrendKind::Constant, dim)
    }

    pub fn linear(dim: usize) -> Self {
        Self::new(TrendKind::Linear, dim)
    }

    /// Basis size p.
    pub fn size(&self) -> usize {
        match self.kind {
            TrendKind::Constant => 1,
            TrendKind::Linear => self.dim + 1,
        }
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        match self.kind {
            TrendKind::Constant => DVector::from_element(1, 1.0),
            TrendKind::Linear => {
                let mut f = DVector::zeros(self.dim + 1);
                f[0] = 1.0;
                for m in 0..self.dim {
                    f[m + 1] = x[m];
                }
                f
            }
        }
    }

    /// Trend matrix F with one row per design point.
    pub fn matrix(&self, design: &DMatrix<f64>) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(design.nrows(), self.size());
        for i in 0..design.nrows() {
            let row = row_vec(design, i);
            f.row_mut(i).copy_from(&self.eval(&row).transpose());
        }
        f
    }
}

/// A correlation matrix together with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct FactorizedCorrelation {
    pub matrix: DMatrix<f64>,
    pub cholesky: Cholesky<f64, Dyn>,
    /// Diagonal regularization actually used.
    pub nugget: f64,
}

/// Correlation matrix of a design (one point per row), regularized with the
/// smallest nugget in `1e-10, 1e-9, …, 1e-6` that admits a Cholesky factor.
pub fn correlation_matrix(
    design: &DMatrix<f64>,
    kernel: &CorrelationKernel,
) -> Result<FactorizedCorrelation> {
    let base = raw_correlation_matrix(design, kernel)?;
    factorize_with_escalation(base, NUGGET_START)
}

/// Same as [`correlation_matrix`] but starting the escalation at `nugget`.
pub fn correlation_matrix_with_nugget(
    design: &DMatrix<f64>,
    kernel: &CorrelationKernel,
    nugget: f64,
) -> Result<FactorizedCorrelation> {
    let base = raw_correlation_matrix(design, kernel)?;
    factorize_with_escalation(base, nugget)
}

fn raw_correlation_matrix(design: &DMatrix<f64>, kernel: &CorrelationKernel) -> Result<DMatrix<f64>> {
    let n = design.nrows();
    if n == 0 {
        return Err(Error::InsufficientPoints {
            required: 1,
            available: 0,
        });
    }
    check_dim(kernel.dim(), design.ncols())?;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row_vec(design, i)).collect();
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = kernel.corr(&rows[i], &rows[j]);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(r)
}

pub(crate) fn factorize_with_escalation(
    base: DMatrix<f64>,
    start: f64,
) -> Result<FactorizedCorrelation> {
    let n = base.nrows();
    let mut nugget = start.max(NUGGET_START);
    loop {
        let mut m = base.clone();
        for i in 0..n {
            m[(i, i)] = 1.0 + nugget;
        }
        FACTORIZATIONS.with(|c| c.set(c.get() + 1));
        if let Some(chol) = m.clone().cholesky() {
            if chol.l_dirty().diagonal().iter().all(|v| v.is_finite() && *v > 0.0) {
                return Ok(FactorizedCorrelation {
                    matrix: m,
                    cholesky: chol,
                    nugget,
                });
            }
        }
        if nugget >= NUGGET_MAX * (1.0 - 1e-9) {
            return Err(Error::Conditioning { nugget });
        }
        nugget = (nugget * 10.0).min(NUGGET_MAX);
    }
}

/// Correlations between every design point and `x`.
pub fn correlation_vector(
    design: &DMatrix<f64>,
    x: &[f64],
    kernel: &CorrelationKernel,
) -> Result<DVector<f64>> {
    check_dim(kernel.dim(), design.ncols())?;
    check_dim(kernel.dim(), x.len())?;
    Ok(corr_vector(design, x, kernel))
}

pub(crate) fn corr_vector(design: &DMatrix<f64>, x: &[f64], kernel: &CorrelationKernel) -> DVector<f64> {
    let d = design.ncols();
    let mut buf = vec![0.0; d];
    DVector::from_fn(design.nrows(), |i, _| {
        for m in 0..d {
            buf[m] = design[(i, m)];
        }
        kernel.corr(&buf, x)
    })
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::Dimension { expected, got })
    } else {
        Ok(())
    }
}

pub(crate) fn row_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    (0..m.ncols()).map(|j| m[(i, j)]).collect()
}

/// Stack points into an n×d design matrix.
pub fn design_matrix(points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::InsufficientPoints {
            required: 1,
            available: 0,
        });
    }
    let d = points[0].len();
    for p in points {
        check_dim(d, p.len())?;
    }
    Ok(DMatrix::from_fn(n, d, |i, j| points[i][j]))
}

pub fn design_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| row_vec(m, i)).collect()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
