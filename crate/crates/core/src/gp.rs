//! Generalized-least-squares Gaussian-process core shared by the kriging
//! model and every co-kriging level.
//!
//! A core holds a design, observations, a regressor matrix (the trend matrix
//! `F` for kriging, `H = [y^{l-1}(D^l) F_l]` for a co-kriging level), one
//! factorized correlation matrix and the estimates derived from them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{self, corr_vector, CorrelationKernel, FactorizedCorrelation};

/// How the process variance is obtained when building a core.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Sigma2 {
    /// `(y - Hc)' R⁻¹ (y - Hc) / (n - q)`.
    Estimate,
    Fixed(f64),
}

/// Smallest process variance kept, so constant data still yields a model.
pub(crate) const SIGMA2_FLOOR: f64 = 1e-290;

#[derive(Debug, Clone)]
pub(crate) struct GpCore {
    pub design: DMatrix<f64>,
    pub y: DVector<f64>,
    pub regressors: DMatrix<f64>,
    pub kernel: CorrelationKernel,
    pub nugget: f64,
    /// Lower Cholesky factor of R.
    pub l: DMatrix<f64>,
    pub r_inv: DMatrix<f64>,
    /// L⁻¹ H.
    pub l_inv_reg: DMatrix<f64>,
    /// (H' R⁻¹ H)⁻¹.
    pub gram_inv: DMatrix<f64>,
    pub coef: DVector<f64>,
    /// R⁻¹ (y - H c).
    pub alpha: DVector<f64>,
    pub sigma2: f64,
}

impl GpCore {
    pub fn build(
        design: DMatrix<f64>,
        y: DVector<f64>,
        regressors: DMatrix<f64>,
        kernel: CorrelationKernel,
        nugget_start: f64,
        sigma2: Sigma2,
        coef: Option<DVector<f64>>,
    ) -> Result<Self> {
        let n = design.nrows();
        let q = regressors.ncols();
        kernels::check_dim(n, y.len())?;
        kernels::check_dim(n, regressors.nrows())?;
        if matches!(sigma2, Sigma2::Estimate) && n < q + 1 {
            return Err(Error::InsufficientPoints {
                required: q + 1,
                available: n,
            });
        }
        let FactorizedCorrelation {
            matrix: _,
            cholesky,
            nugget,
        } = kernels::correlation_matrix_with_nugget(&design, &kernel, nugget_start)?;
        let l = cholesky.l();
        let l_inv_reg = l
            .solve_lower_triangular(&regressors)
            .ok_or(Error::Conditioning { nugget })?;
        let l_inv_y = l.solve_lower_triangular(&y).ok_or(Error::Conditioning { nugget })?;
        let gram = l_inv_reg.transpose() * &l_inv_reg;
        let gram_inv = spd_inverse(&gram).ok_or_else(|| {
            Error::Trend(format!("{q} regressors on {n} points are not linearly independent"))
        })?;
        let coef = match coef {
            Some(c) => {
                kernels::check_dim(q, c.len())?;
                c
            }
            None => &gram_inv * (l_inv_reg.transpose() * &l_inv_y),
        };
        let l_inv_resid = &l_inv_y - &l_inv_reg * &coef;
        let sigma2 = match sigma2 {
            Sigma2::Estimate => (l_inv_resid.norm_squared() / (n - q).max(1) as f64).max(SIGMA2_FLOOR),
            Sigma2::Fixed(s) => s,
        };
        let alpha = l
            .transpose()
            .solve_upper_triangular(&l_inv_resid)
            .ok_or(Error::Conditioning { nugget })?;
        let r_inv = cholesky.inverse();
        Ok(Self {
            design,
            y,
            regressors,
            kernel,
            nugget,
            l,
            r_inv,
            l_inv_reg,
            gram_inv,
            coef,
            alpha,
            sigma2,
        })
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn corr_vec(&self, x: &[f64]) -> DVector<f64> {
        corr_vector(&self.design, x, &self.kernel)
    }

    /// `reg_x' c + r(x)' R⁻¹ (y - H c)`.
    pub fn mean_with(&self, r: &DVector<f64>, reg_x: &DVector<f64>) -> f64 {
        reg_x.dot(&self.coef) + r.dot(&self.alpha)
    }

    /// Whitened cross terms `(L⁻¹ r(x), reg_x - H' R⁻¹ r(x))`.
    pub fn whiten(&self, r: &DVector<f64>, reg_x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let a = self
            .l
            .solve_lower_triangular(r)
            .expect("Cholesky factor has a positive diagonal");
        let u = reg_x - self.l_inv_reg.transpose() * &a;
        (a, u)
    }

    /// Unclamped `σ²(1 - r'R⁻¹r + u'(H'R⁻¹H)⁻¹u)`.
    pub fn var_with(&self, r: &DVector<f64>, reg_x: &DVector<f64>) -> f64 {
        let (a, u) = self.whiten(r, reg_x);
        self.sigma2 * (1.0 - a.norm_squared() + u.dot(&(&self.gram_inv * &u)))
    }

    /// Unclamped posterior covariance between two inputs.
    pub fn cov_with(
        &self,
        x: &[f64],
        r_x: &DVector<f64>,
        reg_x: &DVector<f64>,
        xt: &[f64],
        r_xt: &DVector<f64>,
        reg_xt: &DVector<f64>,
    ) -> f64 {
        let (a, u) = self.whiten(r_x, reg_x);
        let (at, ut) = self.whiten(r_xt, reg_xt);
        self.sigma2 * (self.kernel.corr(x, xt) - a.dot(&at) + u.dot(&(&self.gram_inv * &ut)))
    }

    /// Copy of this core with one extra observation and frozen `σ²` and
    /// coefficients.
    pub fn append(&self, x: &[f64], y_new: f64, reg_row: &DVector<f64>) -> Result<Self> {
        let n = self.n();
        let mut design = self.design.clone().insert_row(n, 0.0);
        for m in 0..self.dim() {
            design[(n, m)] = x[m];
        }
        let y = self.y.clone().insert_row(n, y_new);
        let mut regressors = self.regressors.clone().insert_row(n, 0.0);
        for j in 0..regressors.ncols() {
            regressors[(n, j)] = reg_row[j];
        }
        Self::build(
            design,
            y,
            regressors,
            self.kernel.clone(),
            self.nugget,
            Sigma2::Fixed(self.sigma2),
            Some(self.coef.clone()),
        )
    }

    /// Index of a design point within `tol` (Euclidean) of `x`.
    pub fn coincident(&self, x: &[f64], tol: f64) -> Option<usize> {
        (0..self.n()).find(|&i| {
            let mut s = 0.0;
            for m in 0..self.dim() {
                let h = self.design[(i, m)] - x[m];
                s += h * h;
            }
            s.sqrt() < tol
        })
    }
}

/// Inverse of a small symmetric positive-definite matrix, or `None` when it
/// is numerically singular.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = m.clone().cholesky()?;
    let diag = chol.l_dirty().diagonal();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || (min / max) < 1e-7 {
        return None;
    }
    Some(chol.inverse())
}
