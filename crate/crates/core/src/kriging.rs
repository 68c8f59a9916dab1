//! Universal kriging: fitting, prediction and liar conditioning.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpCore, Sigma2};
use crate::kernels::{self, CorrelationKernel, KernelFamily, TrendBasis, TrendKind, NUGGET_START};
use crate::mle::{self, MleConfig};

/// Relative slack under which a negative variance is treated as round-off.
pub const NEGATIVE_VARIANCE_TOL: f64 = 1e-10;

/// Distance under which two unit-cube points are the same design point.
pub const COINCIDENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub trend: TrendKind,
    pub family: KernelFamily,
    pub mle: MleConfig,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            trend: TrendKind::Constant,
            family: KernelFamily::SquaredExponential,
            mle: MleConfig::default(),
            seed: 0,
        }
    }
}

/// A fitted single-level kriging surrogate on unit-cube inputs.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    pub(crate) core: GpCore,
    trend: TrendBasis,
    log_likelihood: Option<f64>,
}

impl KrigingModel {
    /// Fits β, σ² and θ (maximum profile likelihood).
    pub fn fit(design: &DMatrix<f64>, y: &[f64], opts: &FitOptions) -> Result<Self> {
        Self::fit_warm(design, y, opts, None)
    }

    /// Like [`KrigingModel::fit`], adding `warm_start` as one of the starts.
    pub fn fit_warm(
        design: &DMatrix<f64>,
        y: &[f64],
        opts: &FitOptions,
        warm_start: Option<&[f64]>,
    ) -> Result<Self> {
        let trend = TrendBasis::new(opts.trend, design.ncols());
        check_size(design, y, &trend)?;
        let yv = DVector::from_column_slice(y);
        let f = trend.matrix(design);
        let (theta, ll) =
            mle::estimate_theta(design, &yv, &f, opts.family, &opts.mle, opts.seed, warm_start)?;
        let kernel = CorrelationKernel::new(opts.family, theta)?;
        let mut model = Self::with_kernel(design, y, trend, kernel)?;
        model.log_likelihood = Some(ll);
        Ok(model)
    }

    /// Model with a given kernel; β̂ and σ̂² are estimated.
    pub fn with_kernel(
        design: &DMatrix<f64>,
        y: &[f64],
        trend: TrendBasis,
        kernel: CorrelationKernel,
    ) -> Result<Self> {
        Self::with_kernel_and_nugget(design, y, trend, kernel, NUGGET_START)
    }

    pub(crate) fn with_kernel_and_nugget(
        design: &DMatrix<f64>,
        y: &[f64],
        trend: TrendBasis,
        kernel: CorrelationKernel,
        nugget: f64,
    ) -> Result<Self> {
        check_size(design, y, &trend)?;
        kernels::check_dim(design.ncols(), kernel.dim())?;
        let core = GpCore::build(
            design.clone(),
            DVector::from_column_slice(y),
            trend.matrix(design),
            kernel,
            nugget,
            Sigma2::Estimate,
            None,
        )?;
        Ok(Self {
            core,
            trend,
            log_likelihood: None,
        })
    }

    /// Model with every parameter supplied.
    #[allow(clippy::too_many_arguments)]
    pub fn with_frozen(
        design: &DMatrix<f64>,
        y: &[f64],
        trend: TrendBasis,
        kernel: CorrelationKernel,
        beta: &[f64],
        sigma2: f64,
        nugget: f64,
    ) -> Result<Self> {
        kernels::check_dim(design.nrows(), y.len())?;
        kernels::check_dim(trend.size(), beta.len())?;
        if !(sigma2 > 0.0) {
            return Err(Error::Argument(format!("σ² = {sigma2} is not positive")));
        }
        let core = GpCore::build(
            design.clone(),
            DVector::from_column_slice(y),
            trend.matrix(design),
            kernel,
            nugget,
            Sigma2::Fixed(sigma2),
            Some(DVector::from_column_slice(beta)),
        )?;
        Ok(Self {
            core,
            trend,
            log_likelihood: None,
        })
    }

    pub fn n(&self) -> usize {
        self.core.n()
    }

    pub fn dim(&self) -> usize {
        self.core.dim()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.core.design
    }

    pub fn outputs(&self) -> &DVector<f64> {
        &self.core.y
    }

    pub fn trend(&self) -> TrendBasis {
        self.trend
    }

    pub fn kernel(&self) -> &CorrelationKernel {
        &self.core.kernel
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.core.coef
    }

    pub fn sigma2(&self) -> f64 {
        self.core.sigma2
    }

    pub fn nugget(&self) -> f64 {
        self.core.nugget
    }

    /// Explicit R⁻¹ (nugget included).
    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.core.r_inv
    }

    pub fn trend_matrix(&self) -> &DMatrix<f64> {
        &self.core.regressors
    }

    /// Profile log-likelihood at the estimated θ, when the model was fitted.
    pub fn log_likelihood(&self) -> Option<f64> {
        self.log_likelihood
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        kernels::check_dim(self.dim(), x.len())?;
        Ok(self.mean_unchecked(x))
    }

    pub(crate) fn mean_unchecked(&self, x: &[f64]) -> f64 {
        self.core.mean_with(&self.core.corr_vec(x), &self.trend.eval(x))
    }

    /// Predictive variance `k_n(x, x)`; round-off negatives are clamped to 0.
    pub fn predict_var(&self, x: &[f64]) -> Result<f64> {
        kernels::check_dim(self.dim(), x.len())?;
        let raw = self.raw_var(x);
        clamp_variance(raw, self.core.sigma2)
    }

    pub(crate) fn raw_var(&self, x: &[f64]) -> f64 {
        self.core.var_with(&self.core.corr_vec(x), &self.trend.eval(x))
    }

    pub(crate) fn var_unchecked(&self, x: &[f64]) -> f64 {
        let raw = self.raw_var(x);
        if raw < 0.0 {
            log::debug!("clamping predictive variance {raw:e} at {x:?}");
        }
        raw.max(0.0)
    }

    /// Posterior covariance `k_n(x, x̃)`.
    pub fn predict_cov(&self, x: &[f64], xt: &[f64]) -> Result<f64> {
        kernels::check_dim(self.dim(), x.len())?;
        kernels::check_dim(self.dim(), xt.len())?;
        Ok(self.core.cov_with(
            x,
            &self.core.corr_vec(x),
            &self.trend.eval(x),
            xt,
            &self.core.corr_vec(xt),
            &self.trend.eval(xt),
        ))
    }

    /// Conditions on a fantasized observation at `x_new` equal to the current
    /// mean. θ, σ² and β are kept; only the covariance changes.
    pub fn liar_condition(&self, x_new: &[f64]) -> Result<Self> {
        kernels::check_dim(self.dim(), x_new.len())?;
        if let Some(index) = self.core.coincident(x_new, COINCIDENCE_TOL) {
            return Err(Error::DegenerateUpdate { index });
        }
        let y_new = self.mean_unchecked(x_new);
        let core = self.core.append(x_new, y_new, &self.trend.eval(x_new))?;
        Ok(Self {
            core,
            trend: self.trend,
            log_likelihood: None,
        })
    }

    pub fn snapshot(&self) -> KrigingSnapshot {
        KrigingSnapshot {
            format: KRIGING_FORMAT.to_string(),
            design: kernels::design_rows(&self.core.design),
            outputs: self.core.y.iter().cloned().collect(),
            trend: self.trend.kind,
            kernel: self.core.kernel.family,
            theta: self.core.kernel.theta().to_vec(),
            beta: self.core.coef.iter().cloned().collect(),
            sigma2: self.core.sigma2,
            nugget: self.core.nugget,
        }
    }

    pub fn from_snapshot(s: &KrigingSnapshot) -> Result<Self> {
        if s.format != KRIGING_FORMAT {
            return Err(Error::Config(format!("unknown model format `{}`", s.format)));
        }
        let design = kernels::design_matrix(&s.design)?;
        let trend = TrendBasis::new(s.trend, design.ncols());
        let kernel = CorrelationKernel::new(s.kernel, s.theta.clone())?;
        Self::with_frozen(&design, &s.outputs, trend, kernel, &s.beta, s.sigma2, s.nugget)
    }
}

pub const KRIGING_FORMAT: &str = "seqdesign-kriging/1";

/// Structured-text (JSON) form of a fitted model.
///
/// ```json
/// { "format": "seqdesign-kriging/1", "design": [[0.1, 0.2], ...],
///   "outputs": [...], "trend": "constant", "kernel": "squared-exponential",
///   "theta": [...], "beta": [...], "sigma2": 1.3, "nugget": 1e-10 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigingSnapshot {
    pub format: String,
    pub design: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
    pub trend: TrendKind,
    pub kernel: KernelFamily,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub nugget: f64,
}

pub(crate) fn clamp_variance(raw: f64, sigma2: f64) -> Result<f64> {
    if raw >= 0.0 {
        Ok(raw)
    } else if raw >= -NEGATIVE_VARIANCE_TOL * sigma2.max(f64::MIN_POSITIVE) {
        log::debug!("clamping predictive variance {raw:e}");
        Ok(0.0)
    } else {
        Err(Error::NegativeVariance(raw))
    }
}

fn check_size(design: &DMatrix<f64>, y: &[f64], trend: &TrendBasis) -> Result<()> {
    kernels::check_dim(design.nrows(), y.len())?;
    let required = trend.size() + 2;
    if design.nrows() < required {
        return Err(Error::InsufficientPoints {
            required,
            available: design.nrows(),
        });
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("non-finite output {v}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn se(theta: Vec<f64>) -> CorrelationKernel {
        CorrelationKernel::new(KernelFamily::SquaredExponential, theta).unwrap()
    }

    fn random_model(seed: u64, n: usize, d: usize) -> KrigingModel {
        let mut rng = crate::seeds::rng(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
        let design = kernels::design_matrix(&pts).unwrap();
        let y: Vec<f64> = pts.iter().map(|p| p.iter().map(|v| (4.0 * v).sin()).sum()).collect();
        KrigingModel::with_kernel(&design, &y, TrendBasis::constant(d), se(vec![0.3; d])).unwrap()
    }

    #[test]
    fn three_point_two_point_rule() {
        // n ≥ p + 2
        let d = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(matches!(
            KrigingModel::with_kernel(&d, &[0.0, 1.0], TrendBasis::constant(1), se(vec![1.0])),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn constant_data() {
        let d = DMatrix::from_column_slice(3, 1, &[0.1, 0.5, 0.9]);
        let m = KrigingModel::fit(&d, &[2.5, 2.5, 2.5], &FitOptions::default()).unwrap();
        assert!((m.beta()[0] - 2.5).abs() < 1e-9);
        assert!(m.sigma2() < 1e-20);
        for x in [0.0, 0.3, 0.77, 1.0] {
            assert!((m.predict_mean(&[x]).unwrap() - 2.5).abs() < 1e-9);
        }
    }

    /// Hand 2×2 solve for D = {0, 1}, y = {0, 1}, θ = 1, constant trend.
    fn two_point_oracle(x: f64) -> (f64, f64, f64) {
        let eta = NUGGET_START;
        let c = (-1.0f64).exp();
        let a = 1.0 + eta;
        let det = a * a - c * c;
        // R⁻¹ = [[a, -c], [-c, a]] / det
        let rinv = [[a / det, -c / det], [-c / det, a / det]];
        let one_rinv_one = rinv[0][0] + rinv[0][1] + rinv[1][0] + rinv[1][1];
        let one_rinv_y = rinv[0][1] + rinv[1][1];
        let beta = one_rinv_y / one_rinv_one;
        let res = [0.0 - beta, 1.0 - beta];
        let q = res[0] * (rinv[0][0] * res[0] + rinv[0][1] * res[1])
            + res[1] * (rinv[1][0] * res[0] + rinv[1][1] * res[1]);
        let sigma2 = q / (2.0 - 1.0);
        let r = [(-(x * x)).exp(), (-((x - 1.0) * (x - 1.0))).exp()];
        let mean = beta
            + r[0] * (rinv[0][0] * res[0] + rinv[0][1] * res[1])
            + r[1] * (rinv[1][0] * res[0] + rinv[1][1] * res[1]);
        (beta, sigma2, mean)
    }

    #[test]
    fn two_point_matches_hand_solve() {
        // n ≥ p + 2 does not hold for two points; build the core directly.
        let d = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let core = GpCore::build(
            d.clone(),
            DVector::from_column_slice(&[0.0, 1.0]),
            TrendBasis::constant(1).matrix(&d),
            se(vec![1.0]),
            NUGGET_START,
            Sigma2::Estimate,
            None,
        )
        .unwrap();
        let (beta, sigma2, mean) = two_point_oracle(0.5);
        assert!((core.coef[0] - beta).abs() < 1e-12);
        assert!((core.sigma2 - sigma2).abs() < 1e-9 * sigma2);
        let got = core.mean_with(&core.corr_vec(&[0.5]), &DVector::from_element(1, 1.0));
        assert!((got - mean).abs() < 1e-10);
    }

    #[test]
    fn mle_beats_random_probes() {
        let mut rng = crate::seeds::rng(5);
        let pts: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let design = kernels::design_matrix(&pts).unwrap();
        let y: Vec<f64> = pts.iter().map(|p| (6.0 * p[0]).sin() * (2.0 * p[1]).cos()).collect();
        let opts = FitOptions::default();
        let m = KrigingModel::fit(&design, &y, &opts).unwrap();
        let best = m.log_likelihood().unwrap();
        let yv = DVector::from_column_slice(&y);
        let f = TrendBasis::constant(2).matrix(&design);
        for _ in 0..20 {
            let (lo, hi) = opts.mle.theta_bounds;
            let theta: Vec<f64> = (0..2).map(|_| (rng.gen_range(lo.ln()..hi.ln())).exp()).collect();
            let (ll, _) = mle::profile_log_likelihood(&design, &yv, &f, &se(theta), false).unwrap();
            assert!(best >= ll - 1e-9, "{best} < {ll}");
        }
    }

    #[test]
    fn interpolates_and_reverts_to_trend() {
        let m = random_model(1, 8, 2);
        let range = m.outputs().max() - m.outputs().min();
        for i in 0..m.n() {
            let x = kernels::row_vec(m.design(), i);
            assert!((m.predict_mean(&x).unwrap() - m.outputs()[i]).abs() <= 1e-6 * range);
            assert!(m.predict_var(&x).unwrap() <= m.sigma2() * 10.0 * m.nugget());
        }
        // far away along the extended axis
        let far = m.predict_mean(&[40.0, 40.0]).unwrap();
        assert!((far - m.beta()[0]).abs() < 1e-12);
    }

    #[test]
    fn far_variance_matches_block_matrix() {
        let m = random_model(2, 7, 1);
        let far = m.predict_var(&[50.0]).unwrap();
        // dense (n+1)×(n+1) block inverse of [[0, 1'], [1, R]]
        let n = m.n();
        let mut block = DMatrix::zeros(n + 1, n + 1);
        let r = kernels::correlation_matrix_with_nugget(m.design(), m.kernel(), m.nugget()).unwrap();
        for i in 0..n {
            block[(0, i + 1)] = 1.0;
            block[(i + 1, 0)] = 1.0;
            for j in 0..n {
                block[(i + 1, j + 1)] = r.matrix[(i, j)];
            }
        }
        let inv = block.try_inverse().unwrap();
        let direct = m.sigma2() * (1.0 - inv[(0, 0)]);
        assert!((far - direct).abs() < 1e-9 * direct);
        // equals σ²(1 + 1/(1'R⁻¹1))
        let s: f64 = m.r_inv().sum();
        assert!((far - m.sigma2() * (1.0 + 1.0 / s)).abs() < 1e-9 * far);
    }

    #[test]
    fn covariance_symmetric() {
        let m = random_model(3, 9, 2);
        let mut rng = crate::seeds::rng(99);
        for _ in 0..100 {
            let a = [rng.gen(), rng.gen()];
            let b = [rng.gen(), rng.gen()];
            let ab = m.predict_cov(&a, &b).unwrap();
            let ba = m.predict_cov(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12 * m.sigma2().max(1.0));
            assert!((m.predict_cov(&a, &a).unwrap() - m.predict_var(&a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn liar_matches_rank_one_update() {
        let m = random_model(4, 8, 2);
        let mut rng = crate::seeds::rng(7);
        let x_new = [0.37, 0.61];
        let liar = m.liar_condition(&x_new).unwrap();
        assert!(liar.predict_var(&x_new).unwrap() <= 10.0 * m.nugget() * m.sigma2());
        let kxx = m.predict_var(&x_new).unwrap() + m.sigma2() * m.nugget();
        for _ in 0..50 {
            let u = [rng.gen(), rng.gen()];
            let kux = m.predict_cov(&u, &x_new).unwrap();
            let oracle = m.predict_var(&u).unwrap() - kux * kux / kxx;
            let got = liar.predict_var(&u).unwrap();
            assert!((got - oracle).abs() < 1e-8 * m.sigma2(), "{got} vs {oracle}");
            assert!(got <= m.predict_var(&u).unwrap() + 1e-10);
        }
        // the fantasized value leaves the mean unchanged
        let u = [0.2, 0.9];
        assert!((liar.predict_mean(&u).unwrap() - m.predict_mean(&u).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn liar_rejects_existing_point() {
        let m = random_model(5, 6, 1);
        let x = kernels::row_vec(m.design(), 2);
        assert!(matches!(m.liar_condition(&x), Err(Error::DegenerateUpdate { index: 2 })));
    }

    #[test]
    fn affine_output_invariance() {
        let m = random_model(6, 9, 2);
        let (a, b) = (-3.5, 12.0);
        let y2: Vec<f64> = m.outputs().iter().map(|v| a * v + b).collect();
        let m2 = KrigingModel::with_kernel(m.design(), &y2, m.trend(), m.kernel().clone()).unwrap();
        for u in [[0.1, 0.2], [0.5, 0.5], [0.9, 0.33]] {
            let (m1, v1) = (m.predict_mean(&u).unwrap(), m.predict_var(&u).unwrap());
            let (mm, vv) = (m2.predict_mean(&u).unwrap(), m2.predict_var(&u).unwrap());
            assert!((mm - (a * m1 + b)).abs() < 1e-8 * (a * m1 + b).abs().max(1.0));
            assert!((vv - a * a * v1).abs() < 1e-8 * (a * a * v1).max(1e-12));
        }
    }

    #[test]
    fn sigma2_recomputes_from_factors() {
        let m = random_model(7, 10, 3);
        let resid = m.outputs() - m.trend_matrix() * m.beta();
        let q = resid.dot(&(m.r_inv() * &resid));
        let s = q / (m.n() - m.trend().size()) as f64;
        assert!((s - m.sigma2()).abs() < 1e-10 * s);
    }

    #[test]
    fn rank_deficient_trend() {
        // all points share x₁, so the linear trend cannot be identified
        let pts = vec![vec![0.5, 0.1], vec![0.5, 0.4], vec![0.5, 0.6], vec![0.5, 0.9], vec![0.5, 0.95]];
        let design = kernels::design_matrix(&pts).unwrap();
        let r = KrigingModel::with_kernel(&design, &[1.0, 2.0, 0.5, 0.1, 0.3], TrendBasis::linear(2), se(vec![0.3, 0.3]));
        assert!(matches!(r, Err(Error::Trend(_))));
    }

    #[test]
    fn snapshot_round_trip() {
        let m = random_model(8, 7, 2);
        let json = serde_json::to_string(&m.snapshot()).unwrap();
        let back = KrigingModel::from_snapshot(&serde_json::from_str(&json).unwrap()).unwrap();
        for u in [[0.3, 0.3], [0.8, 0.1]] {
            assert!((back.predict_mean(&u).unwrap() - m.predict_mean(&u).unwrap()).abs() < 1e-12);
            assert!((back.predict_var(&u).unwrap() - m.predict_var(&u).unwrap()).abs() < 1e-12);
        }
    }
}
