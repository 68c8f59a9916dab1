//! Profile-likelihood estimation of kernel length-scales.
//!
//! With the regression coefficients and the process variance concentrated
//! out, the log-likelihood of the length-scales is
//! `-(n ln(Q/n) + ln det R) / 2` where `Q` is the GLS residual quadratic form.
//! It is maximized over a box in `ln θ` by multi-start BFGS on a logistic
//! reparametrization of the box.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::spd_inverse;
use crate::kernels::{self, row_vec, CorrelationKernel, KernelFamily, NUGGET_START};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleConfig {
    pub starts: usize,
    pub max_iters: usize,
    /// Per-axis bounds on θ in unit-cube coordinates.
    pub theta_bounds: (f64, f64),
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            starts: 10,
            max_iters: 100,
            theta_bounds: (0.05, 5.0),
        }
    }
}

/// Profile log-likelihood and its gradient with respect to `ln θ`.
pub(crate) fn profile_log_likelihood(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    regressors: &DMatrix<f64>,
    kernel: &CorrelationKernel,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let n = design.nrows();
    let d = design.ncols();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row_vec(design, i)).collect();
    let mut base = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = kernel.corr(&rows[i], &rows[j]);
            base[(i, j)] = v;
            base[(j, i)] = v;
        }
    }
    let fact = kernels::factorize_with_escalation(base, NUGGET_START)?;
    let l = fact.cholesky.l();
    let l_inv_f = l
        .solve_lower_triangular(regressors)
        .ok_or(Error::Conditioning { nugget: fact.nugget })?;
    let l_inv_y = l.solve_lower_triangular(y).ok_or(Error::Conditioning { nugget: fact.nugget })?;
    let gram_inv = spd_inverse(&(l_inv_f.transpose() * &l_inv_f))
        .ok_or_else(|| Error::Trend("regressors are not linearly independent".into()))?;
    let coef = &gram_inv * (l_inv_f.transpose() * &l_inv_y);
    let white_resid = &l_inv_y - &l_inv_f * &coef;
    let scale = y.amax().max(1.0);
    let q = white_resid.norm_squared().max(1e-300 * scale * scale);
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let nf = n as f64;
    let value = -0.5 * (nf * (q / nf).ln() + log_det);
    if !with_grad {
        return Ok((value, Vec::new()));
    }
    let alpha = l
        .transpose()
        .solve_upper_triangular(&white_resid)
        .ok_or(Error::Conditioning { nugget: fact.nugget })?;
    let r_inv = fact.cholesky.inverse();
    let mut grad = vec![0.0; d];
    let mut g = vec![0.0; d];
    for i in 0..n {
        for j in 0..i {
            kernel.corr_with_log_grad(&rows[i], &rows[j], &mut g);
            // symmetric pair counted twice, halved by the 1/2 factor
            let w = nf / q * alpha[i] * alpha[j] - r_inv[(i, j)];
            for m in 0..d {
                grad[m] += w * g[m];
            }
        }
    }
    Ok((value, grad))
}

/// Best length-scales found by multi-start BFGS, with their log-likelihood.
pub(crate) fn estimate_theta(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    regressors: &DMatrix<f64>,
    family: KernelFamily,
    cfg: &MleConfig,
    seed: u64,
    warm_start: Option<&[f64]>,
) -> Result<(Vec<f64>, f64)> {
    let d = design.ncols();
    let (tmin, tmax) = cfg.theta_bounds;
    if !(tmin > 0.0 && tmin < tmax) {
        return Err(Error::Config(format!("invalid θ bounds ({tmin}, {tmax})")));
    }
    let box_ = LogBox {
        lo: tmin.ln(),
        hi: tmax.ln(),
    };
    let objective = |z: &[f64], grad: bool| -> Option<(f64, Vec<f64>)> {
        let theta: Vec<f64> = z.iter().map(|&v| box_.theta(v)).collect();
        let kernel = CorrelationKernel::new(family, theta).ok()?;
        let (v, g) = profile_log_likelihood(design, y, regressors, &kernel, grad).ok()?;
        if !v.is_finite() {
            return None;
        }
        let g = g
            .iter()
            .zip(z)
            .map(|(gl, &zi)| -gl * box_.dlog_dz(zi))
            .collect();
        Some((-v, g))
    };

    let mut rng = seeds::rng(seed);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm_start {
        kernels::check_dim(d, w.len())?;
        starts.push(w.iter().map(|&t| box_.z_of_theta(t)).collect());
    }
    starts.push(vec![box_.z_of_fraction(0.5); d]);
    while starts.len() < cfg.starts.max(1) {
        starts.push((0..d).map(|_| box_.z_of_fraction(rng.gen_range(0.02..0.98))).collect());
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for z0 in starts.into_iter().take(cfg.starts.max(1)) {
        if let Some((z, f)) = bfgs(&objective, z0, cfg.max_iters) {
            if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                best = Some((z, f));
            }
        }
    }
    let (z, f) = best.ok_or(Error::Conditioning {
        nugget: kernels::NUGGET_MAX,
    })?;
    Ok((z.iter().map(|&v| box_.theta(v)).collect(), -f))
}

#[derive(Clone, Copy)]
struct LogBox {
    lo: f64,
    hi: f64,
}

impl LogBox {
    fn theta(&self, z: f64) -> f64 {
        (self.lo + (self.hi - self.lo) * sigmoid(z)).exp()
    }

    fn dlog_dz(&self, z: f64) -> f64 {
        let s = sigmoid(z);
        (self.hi - self.lo) * s * (1.0 - s)
    }

    fn z_of_fraction(&self, f: f64) -> f64 {
        let f = f.clamp(0.01, 0.99);
        (f / (1.0 - f)).ln()
    }

    fn z_of_theta(&self, t: f64) -> f64 {
        self.z_of_fraction((t.ln() - self.lo) / (self.hi - self.lo))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Minimizes `f` with BFGS and Armijo backtracking. Returns `None` when the
/// starting point cannot be evaluated.
fn bfgs<F>(f: &F, x0: Vec<f64>, max_iters: usize) -> Option<(Vec<f64>, f64)>
where
    F: Fn(&[f64], bool) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let (mut fx, mut g) = f(&x0, true)?;
    let mut x = x0;
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_iters {
        let gv = DVector::from_column_slice(&g);
        if gv.amax() < 1e-7 {
            break;
        }
        let mut p = -(&h * &gv);
        let mut slope = p.dot(&gv);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            p = -gv.clone();
            slope = p.dot(&gv);
        }
        let pmax = p.amax();
        let mut step = if pmax > 3.0 { 3.0 / pmax } else { 1.0 };
        let mut accepted = None;
        for _ in 0..30 {
            let xn: Vec<f64> = x.iter().zip(p.iter()).map(|(a, b)| a + step * b).collect();
            if let Some((fnew, _)) = f(&xn, false) {
                if fnew <= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fnew));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        let Some((_, gn)) = f(&xn, true) else { break };
        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let yv = DVector::from_iterator(n, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - rho * &s * yv.transpose();
            let right = &i - rho * &yv * s.transpose();
            h = left * &h * right + rho * &s * s.transpose();
        }
        let done = (fx - fnew).abs() < 1e-11 * (1.0 + fx.abs());
        x = xn;
        fx = fnew;
        g = gn;
        if done {
            break;
        }
    }
    Some((x, fx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::TrendBasis;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeds::rng(3);
        let pts: Vec<Vec<f64>> = (0..9).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let design = kernels::design_matrix(&pts).unwrap();
        let y = DVector::from_iterator(9, pts.iter().map(|p| (5.0 * p[0]).sin() + p[1] * p[1]));
        let f = TrendBasis::linear(2).matrix(&design);
        for family in [KernelFamily::SquaredExponential, KernelFamily::Matern52] {
            let theta = vec![0.3, 0.6];
            let k = CorrelationKernel::new(family, theta.clone()).unwrap();
            let (_, g) = profile_log_likelihood(&design, &y, &f, &k, true).unwrap();
            for m in 0..2 {
                let h: f64 = 1e-5;
                let mut tp = theta.clone();
                tp[m] *= h.exp();
                let mut tm = theta.clone();
                tm[m] *= (-h).exp();
                let lp = profile_log_likelihood(&design, &y, &f, &k.with_theta(tp).unwrap(), false).unwrap().0;
                let lm = profile_log_likelihood(&design, &y, &f, &k.with_theta(tm).unwrap(), false).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - g[m]).abs() < 1e-4 * (1.0 + fd.abs()), "{family:?} {m}: {fd} vs {}", g[m]);
            }
        }
    }

    #[test]
    fn bfgs_minimizes_quadratic() {
        let f = |x: &[f64], _g: bool| {
            let v = (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2);
            Some((v, vec![2.0 * (x[0] - 1.0), 20.0 * (x[1] + 2.0)]))
        };
        let (x, v) = bfgs(&f, vec![0.0, 0.0], 100).unwrap();
        assert!(v < 1e-10);
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] + 2.0).abs() < 1e-5);
    }
}
