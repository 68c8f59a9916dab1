//! Closed-form leave-one-out cross-validation with β and σ² re-estimated
//! after each deletion (θ held fixed).
//!
//! With `Q = R⁻¹`, deleting point `i` leaves `R_{-i,-i}⁻¹ = K_i`, the Schur
//! complement of `Q_ii`. Everything below is computed from the stored `Q`;
//! no correlation matrix is refactorized.

use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gp::{spd_inverse, GpCore};
use crate::kernels;
use crate::kriging::KrigingModel;

/// Cap applied to `e²/s²` before it enters a criterion.
pub const RATIO_CAP: f64 = 1e6;

const QII_FLOOR: f64 = 1e-12;

/// One deletion of a design point from a GLS core.
#[derive(Debug, Clone)]
pub(crate) struct LooPoint {
    /// Observed minus predicted value at the deleted point.
    pub error: f64,
    /// Predictive variance at the deleted point.
    pub variance: f64,
    /// Coefficients re-estimated without the point.
    pub coef: DVector<f64>,
    /// `K_i (y_{-i} - H_{-i} c_{-i})`, padded with a zero at the deleted index.
    pub weights: DVector<f64>,
}

/// Leave-one-out at index `i` of `core`.
///
/// `reg_shift` is added to the deleted point's regressor row when forming the
/// prediction-side regressor; it is zero for plain kriging and carries the
/// coarse-level LOO correction for co-kriging levels.
pub(crate) fn loo_point(core: &GpCore, i: usize, reg_shift: Option<&DVector<f64>>) -> Result<LooPoint> {
    let n = core.n();
    let q = core.regressors.ncols();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    if n < q + 2 {
        return Err(Error::InsufficientPoints {
            required: q + 2,
            available: n,
        });
    }
    let qm = &core.r_inv;
    let qii = qm[(i, i)];
    if !(qii.is_finite() && qii > QII_FLOOR) {
        return Err(Error::Conditioning { nugget: core.nugget });
    }
    let h = &core.regressors;
    let qh = qm * h;
    let qh_i = qh.row(i).transpose();
    let gram = h.transpose() * &qh - &qh_i * qh_i.transpose() / qii;
    let gram_inv = spd_inverse(&gram)
        .ok_or_else(|| Error::Trend(format!("regressors singular after deleting point {i}")))?;
    let qy = qm * &core.y;
    let rhs = h.transpose() * &qy - &qh_i * (qy[i] / qii);
    let coef = &gram_inv * rhs;

    let resid = &core.y - h * &coef;
    let q_resid = qm * &resid;
    let error = q_resid[i] / qii;
    let q_col_i = qm.column(i);
    let mut weights = &q_resid - q_col_i * (q_resid[i] / qii);
    weights[i] = 0.0;
    let quad: f64 = (0..n).filter(|&j| j != i).map(|j| resid[j] * weights[j]).sum();
    let sigma2 = (quad / (n - q - 1) as f64).max(0.0);

    let mut u = &qh_i / qii;
    if let Some(shift) = reg_shift {
        u += shift;
    }
    let spread = 1.0 / qii - core.nugget + u.dot(&(&gram_inv * &u));
    Ok(LooPoint {
        error,
        variance: sigma2 * spread,
        coef,
        weights,
    })
}

/// Kriging deletion; the reduced model must keep `p + 2` points.
fn kriging_loo(model: &KrigingModel, i: usize) -> Result<LooPoint> {
    let q = model.core.regressors.ncols();
    if i < model.n() && model.n() < q + 3 {
        return Err(Error::InsufficientPoints {
            required: q + 3,
            available: model.n(),
        });
    }
    loo_point(&model.core, i, None)
}

/// Per-point LOO-CV squared errors and predictive variances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoocvDiagnostics {
    pub e2: Vec<f64>,
    pub s2: Vec<f64>,
    /// `e2[i] / s2[i]`, capped at [`RATIO_CAP`].
    pub ratios: Vec<f64>,
}

impl LoocvDiagnostics {
    /// Diagnostics with every LOO error zero.
    pub fn zeros(n: usize) -> Self {
        Self {
            e2: vec![0.0; n],
            s2: vec![1.0; n],
            ratios: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.e2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e2.is_empty()
    }

    pub(crate) fn from_parts(e2: Vec<f64>, s2: Vec<f64>) -> Result<Self> {
        let mut ratios = Vec::with_capacity(e2.len());
        for (i, (e, s)) in e2.iter().zip(&s2).enumerate() {
            if !(*s > 0.0) {
                return Err(Error::Diagnostics {
                    level: 1,
                    index: i,
                    reason: format!("LOO variance {s:e} is not positive"),
                });
            }
            ratios.push(cap_ratio(e / s, i));
        }
        Ok(Self { e2, s2, ratios })
    }

    /// CSV with columns `index,e2,s2,ratio`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["index", "e2", "s2", "ratio"])?;
        for i in 0..self.len() {
            w.write_record([
                i.to_string(),
                self.e2[i].to_string(),
                self.s2[i].to_string(),
                self.ratios[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub(crate) fn cap_ratio(raw: f64, index: usize) -> f64 {
    if raw > RATIO_CAP || !raw.is_finite() {
        log::debug!("LOO ratio {raw:e} at point {index} capped at {RATIO_CAP:e}");
        RATIO_CAP
    } else {
        raw
    }
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Argument(format!("{}: {other:?}", path.display())),
    }
}

/// `m_{n,-i}(x_i)`.
pub fn loocv_mean(model: &KrigingModel, i: usize) -> Result<f64> {
    let p = kriging_loo(model, i)?;
    Ok(model.core.y[i] - p.error)
}

/// `k_{n,-i}(x_i)` with σ² re-estimated on the reduced data (divisor n-p-1).
pub fn loocv_var(model: &KrigingModel, i: usize) -> Result<f64> {
    Ok(kriging_loo(model, i)?.variance)
}

pub fn loocv_diagnostics(model: &KrigingModel) -> Result<LoocvDiagnostics> {
    let n = model.n();
    let mut e2 = Vec::with_capacity(n);
    let mut s2 = Vec::with_capacity(n);
    for i in 0..n {
        let p = kriging_loo(model, i)?;
        e2.push(p.error * p.error);
        s2.push(p.variance);
    }
    LoocvDiagnostics::from_parts(e2, s2)
}

/// Jackknife variance estimator built from the n deleted-point models.
#[derive(Debug, Clone)]
pub struct Jackknife<'a> {
    model: &'a KrigingModel,
    deletions: Vec<LooPoint>,
}

impl<'a> Jackknife<'a> {
    pub fn new(model: &'a KrigingModel) -> Result<Self> {
        let deletions = (0..model.n())
            .map(|i| kriging_loo(model, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { model, deletions })
    }

    /// `m_{n,-i}(x)` for every `i`.
    pub fn deleted_means(&self, x: &[f64]) -> Result<Vec<f64>> {
        kernels::check_dim(self.model.dim(), x.len())?;
        let r = self.model.core.corr_vec(x);
        let f = self.model.trend().eval(x);
        Ok(self
            .deletions
            .iter()
            .map(|d| f.dot(&d.coef) + r.dot(&d.weights))
            .collect())
    }

    /// `s²_jack(x) = Σ (ỹ_i - ȳ)² / (n(n-1))` with pseudo-values
    /// `ỹ_i = n m_n(x) - (n-1) m_{n,-i}(x)`.
    pub fn variance(&self, x: &[f64]) -> Result<f64> {
        let n = self.model.n() as f64;
        let full = self.model.predict_mean(x)?;
        let pseudo: Vec<f64> = self
            .deleted_means(x)?
            .into_iter()
            .map(|m| n * full - (n - 1.0) * m)
            .collect();
        let mean = pseudo.iter().sum::<f64>() / n;
        let ss: f64 = pseudo.iter().map(|v| (v - mean) * (v - mean)).sum();
        Ok(ss / (n * (n - 1.0)))
    }
}

pub fn jackknife_variance(model: &KrigingModel, x: &[f64]) -> Result<f64> {
    Jackknife::new(model)?.variance(x)
}
