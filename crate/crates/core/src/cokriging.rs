//! Recursive multi-fidelity co-kriging on nested designs.
//!
//! Level 1 is an ordinary [`KrigingModel`]. Every finer level `l` is a GLS
//! core on `D^l` with regressors `H_l = [y^{l-1}(D^l) F_l]`, so its
//! coefficients are `(ρ_{l-1}, β_l)` and its residual process is the bias
//! `δ^l`. Levels are numbered from 1 (coarsest) in every public method.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpCore, Sigma2};
use crate::kernels::{self, CorrelationKernel, KernelFamily, TrendBasis, TrendKind, NUGGET_START};
use crate::kriging::{clamp_variance, FitOptions, KrigingModel, KrigingSnapshot, COINCIDENCE_TOL};
use crate::loocv::{cap_ratio, loo_point, LoocvDiagnostics};
use crate::mle::{self, MleConfig};
use crate::seeds;

/// Coordinate tolerance of the nesting check.
pub const NESTING_TOL: f64 = 1e-12;

/// Observations of `s` code levels on nested unit-cube designs
/// `D^s ⊆ … ⊆ D^1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiFidelityData {
    designs: Vec<DMatrix<f64>>,
    outputs: Vec<DVector<f64>>,
    /// `parent[l][i]`: row of point `i` of level `l` inside level `l - 1`
    /// (0-based levels; `parent[0]` is empty).
    parent: Vec<Vec<usize>>,
}

impl MultiFidelityData {
    pub fn new(designs: Vec<DMatrix<f64>>, outputs: Vec<Vec<f64>>) -> Result<Self> {
        if designs.is_empty() {
            return Err(Error::Argument("at least one code level is required".into()));
        }
        kernels::check_dim(designs.len(), outputs.len())?;
        let d = designs[0].ncols();
        let mut parent = vec![Vec::new()];
        for (l, (x, y)) in designs.iter().zip(&outputs).enumerate() {
            kernels::check_dim(d, x.ncols())?;
            kernels::check_dim(x.nrows(), y.len())?;
            if x.nrows() == 0 {
                return Err(Error::Argument(format!("level {} has no points", l + 1)));
            }
            if let Some(v) = y.iter().find(|v| !v.is_finite()) {
                return Err(Error::Argument(format!("non-finite output {v} at level {}", l + 1)));
            }
            if l > 0 {
                let coarse = &designs[l - 1];
                let map = (0..x.nrows())
                    .map(|i| {
                        let p = kernels::row_vec(x, i);
                        find_exact(coarse, &p).ok_or_else(|| {
                            Error::Nesting(format!(
                                "point {i} of level {} ({p:?}) is missing from level {l}",
                                l + 1
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                parent.push(map);
            }
        }
        Ok(Self {
            designs,
            outputs: outputs.into_iter().map(DVector::from_vec).collect(),
            parent,
        })
    }

    /// Single-level data.
    pub fn single(design: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        Self::new(vec![design], vec![y])
    }

    pub fn levels(&self) -> usize {
        self.designs.len()
    }

    pub fn dim(&self) -> usize {
        self.designs[0].ncols()
    }

    pub fn n(&self, level: usize) -> usize {
        self.designs[level - 1].nrows()
    }

    pub fn design(&self, level: usize) -> &DMatrix<f64> {
        &self.designs[level - 1]
    }

    pub fn outputs(&self, level: usize) -> &DVector<f64> {
        &self.outputs[level - 1]
    }

    /// Row index, in level `coarser`, of point `i` of level `level`.
    pub fn index(&self, level: usize, i: usize, coarser: usize) -> Result<usize> {
        if level == 0 || level > self.levels() || coarser == 0 || coarser > level {
            return Err(Error::Argument(format!(
                "no map from level {level} to level {coarser} among {} levels",
                self.levels()
            )));
        }
        if i >= self.n(level) {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.n(level),
            });
        }
        let mut idx = i;
        for l in (coarser..level).rev() {
            idx = self.parent[l][idx];
        }
        Ok(idx)
    }

    /// Index of the point of level `level` within Euclidean distance `tol`
    /// of `x`.
    pub fn locate(&self, level: usize, x: &[f64], tol: f64) -> Option<usize> {
        let design = &self.designs[level - 1];
        (0..design.nrows()).find(|&i| kernels::sq_dist(&kernels::row_vec(design, i), x).sqrt() < tol)
    }

    /// Appends runs of `x` at levels `first, first + 1, …` (one value each).
    ///
    /// `x` must already be present (exactly) at every level below `first`;
    /// those stored coordinates are reused so nesting stays exact.
    pub fn add_runs(&mut self, x: &[f64], first: usize, values: &[f64]) -> Result<()> {
        kernels::check_dim(self.dim(), x.len())?;
        let last = first + values.len() - 1;
        if first == 0 || values.is_empty() || last > self.levels() {
            return Err(Error::Argument(format!(
                "cannot add {} runs from level {first} to {} levels",
                values.len(),
                self.levels()
            )));
        }
        let mut point = x.to_vec();
        let mut parent_row = None;
        if first > 1 {
            let below = find_exact(&self.designs[first - 2], x).ok_or_else(|| {
                Error::Nesting(format!("{x:?} has no run at level {}", first - 1))
            })?;
            point = kernels::row_vec(&self.designs[first - 2], below);
            parent_row = Some(below);
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite output {v}")));
        }
        if let Some(i) = find_exact(&self.designs[first - 1], &point) {
            return Err(Error::Nesting(format!(
                "{point:?} already run at level {first} (point {i})"
            )));
        }
        for (k, &v) in values.iter().enumerate() {
            let l = first - 1 + k;
            let n = self.designs[l].nrows();
            let mut design = self.designs[l].clone().insert_row(n, 0.0);
            for (m, &c) in point.iter().enumerate() {
                design[(n, m)] = c;
            }
            self.designs[l] = design;
            self.outputs[l] = self.outputs[l].clone().insert_row(n, v);
            if l > 0 {
                let row = parent_row.unwrap_or(self.designs[l - 1].nrows() - 1);
                self.parent[l].push(row);
            }
            parent_row = None;
        }
        Ok(())
    }

    /// Observed level-`level - 1` outputs at the points of `D^level`.
    fn coarse_outputs(&self, level: usize) -> DVector<f64> {
        let y = &self.outputs[level - 2];
        DVector::from_iterator(
            self.n(level),
            self.parent[level - 1].iter().map(|&j| y[j]),
        )
    }

    /// Data of levels `1..=level` only.
    pub fn truncated(&self, level: usize) -> Self {
        Self {
            designs: self.designs[..level].to_vec(),
            outputs: self.outputs[..level].to_vec(),
            parent: self.parent[..level].to_vec(),
        }
    }
}

fn find_exact(design: &DMatrix<f64>, x: &[f64]) -> Option<usize> {
    (0..design.nrows()).find(|&i| {
        x.iter()
            .enumerate()
            .all(|(m, &c)| (design[(i, m)] - c).abs() <= NESTING_TOL)
    })
}

/// Fitting options; `trends` holds one entry per level, or a single entry
/// used at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CokrigingOptions {
    pub trends: Vec<TrendKind>,
    pub family: KernelFamily,
    pub mle: MleConfig,
    pub seed: u64,
}

impl Default for CokrigingOptions {
    fn default() -> Self {
        Self {
            trends: vec![TrendKind::Constant],
            family: KernelFamily::SquaredExponential,
            mle: MleConfig::default(),
            seed: 0,
        }
    }
}

fn level_trends(kinds: &[TrendKind], levels: usize, dim: usize) -> Result<Vec<TrendBasis>> {
    match kinds.len() {
        1 => Ok(vec![TrendBasis::new(kinds[0], dim); levels]),
        n if n == levels => Ok(kinds.iter().map(|&k| TrendBasis::new(k, dim)).collect()),
        n => Err(Error::Config(format!("{n} trends given for {levels} levels"))),
    }
}

#[derive(Debug, Clone)]
struct Level {
    core: GpCore,
    trend: TrendBasis,
    log_likelihood: Option<f64>,
}

impl Level {
    fn regressor(&self, coarse_mean: f64, x: &[f64]) -> DVector<f64> {
        let f = self.trend.eval(x);
        let mut h = DVector::zeros(f.len() + 1);
        h[0] = coarse_mean;
        h.rows_mut(1, f.len()).copy_from(&f);
        h
    }
}

/// Per-level variance contributions at one input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelVarianceProfile {
    /// `σ²_{δ^i}(x)` for `i = 1..=l`.
    pub bias: Vec<f64>,
    /// `σ²_{δ^i}(x) Π_{j=i}^{l-1} ρ_j²`.
    pub weighted: Vec<f64>,
    /// `k^l(x, x)` from the variance recursion.
    pub total: f64,
}

impl LevelVarianceProfile {
    pub fn sum(&self) -> f64 {
        self.weighted.iter().sum()
    }
}

/// Leave-one-out quantities of one level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelDiagnostics {
    /// `ε_{LOO-CV,l}(x_i^l)`, observed minus predicted.
    pub errors: Vec<f64>,
    /// `σ²_{LOO-CV,l}(x_i^l)`.
    pub variances: Vec<f64>,
    /// `ε_l - ρ̂_{l-1} ε_{l-1}`: the part explained by the bias `δ^l`.
    pub own_errors: Vec<f64>,
    /// `σ²_l - ρ̂²_{l-1} σ²_{l-1}`.
    pub own_variances: Vec<f64>,
    /// `ρ̂_{l-1}` re-estimated without the point (0 at level 1).
    pub rho_minus: Vec<f64>,
    /// `own_errors² / own_variances`, capped.
    pub ratios: Vec<f64>,
}

impl LevelDiagnostics {
    fn zeros(n: usize) -> Self {
        Self {
            errors: vec![0.0; n],
            variances: vec![1.0; n],
            own_errors: vec![0.0; n],
            own_variances: vec![1.0; n],
            rho_minus: vec![0.0; n],
            ratios: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    /// `Σ_j ratios[j]`, the global adjustment of the level.
    pub fn ratio_sum(&self) -> f64 {
        self.ratios.iter().sum()
    }
}

/// Multi-level LOO-CV diagnostics, one entry per level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MfDiagnostics {
    pub levels: Vec<LevelDiagnostics>,
}

impl MfDiagnostics {
    /// Diagnostics with every LOO error zero.
    pub fn zeros(data: &MultiFidelityData) -> Self {
        Self {
            levels: (1..=data.levels()).map(|l| LevelDiagnostics::zeros(data.n(l))).collect(),
        }
    }

    pub fn level(&self, level: usize) -> &LevelDiagnostics {
        &self.levels[level - 1]
    }

    /// Single-level view of `level` (errors explained by its own bias).
    pub fn to_loocv(&self, level: usize) -> LoocvDiagnostics {
        let d = self.level(level);
        LoocvDiagnostics {
            e2: d.own_errors.iter().map(|e| e * e).collect(),
            s2: d.own_variances.clone(),
            ratios: d.ratios.clone(),
        }
    }
}

/// A fitted recursive co-kriging model.
#[derive(Debug, Clone)]
pub struct CokrigingModel {
    data: MultiFidelityData,
    base: KrigingModel,
    upper: Vec<Level>,
}

impl CokrigingModel {
    /// Fits every level by maximum profile likelihood, coarsest first.
    pub fn fit(data: MultiFidelityData, opts: &CokrigingOptions) -> Result<Self> {
        Self::fit_warm(data, opts, None)
    }

    /// Like [`CokrigingModel::fit`], with one warm-start θ per level.
    pub fn fit_warm(
        data: MultiFidelityData,
        opts: &CokrigingOptions,
        warm: Option<&[Vec<f64>]>,
    ) -> Result<Self> {
        let trends = level_trends(&opts.trends, data.levels(), data.dim())?;
        let warm_at = |l: usize| warm.and_then(|w| w.get(l - 1)).map(|t| t.as_slice());
        let base_opts = FitOptions {
            trend: trends[0].kind,
            family: opts.family,
            mle: opts.mle.clone(),
            seed: opts.seed,
        };
        let base = KrigingModel::fit_warm(
            data.design(1),
            data.outputs(1).as_slice(),
            &base_opts,
            warm_at(1),
        )?;
        let mut upper = Vec::with_capacity(data.levels() - 1);
        for l in 2..=data.levels() {
            let (design, y, h) = level_inputs(&data, l, &trends[l - 1], 3)?;
            let (theta, ll) = mle::estimate_theta(
                &design,
                &y,
                &h,
                opts.family,
                &opts.mle,
                seeds::derive(opts.seed, l as u64),
                warm_at(l),
            )?;
            let kernel = CorrelationKernel::new(opts.family, theta)?;
            let core = GpCore::build(design, y, h, kernel, NUGGET_START, Sigma2::Estimate, None)?;
            upper.push(Level {
                core,
                trend: trends[l - 1],
                log_likelihood: Some(ll),
            });
        }
        Ok(Self { data, base, upper })
    }

    /// Model with fixed kernels; ρ, β and σ² are estimated.
    pub fn with_kernels(
        data: MultiFidelityData,
        trends: &[TrendKind],
        kernels: Vec<CorrelationKernel>,
    ) -> Result<Self> {
        let bases = level_trends(trends, data.levels(), data.dim())?;
        for (l, t) in bases.iter().enumerate().skip(1) {
            level_inputs(&data, l + 1, t, 3)?;
        }
        let nuggets = vec![NUGGET_START; data.levels()];
        Self::with_kernels_and_nuggets(data, trends, kernels, &nuggets)
    }

    /// Like [`CokrigingModel::with_kernels`] with given nugget starts and
    /// only the `n_l ≥ p_l + 2` bound needed to fit.
    pub(crate) fn with_kernels_and_nuggets(
        data: MultiFidelityData,
        trends: &[TrendKind],
        kernels: Vec<CorrelationKernel>,
        nuggets: &[f64],
    ) -> Result<Self> {
        let trends = level_trends(trends, data.levels(), data.dim())?;
        kernels::check_dim(data.levels(), kernels.len())?;
        let mut kernels = kernels.into_iter();
        let base = KrigingModel::with_kernel_and_nugget(
            data.design(1),
            data.outputs(1).as_slice(),
            trends[0],
            kernels.next().expect("one kernel per level"),
            nuggets[0],
        )?;
        let mut upper = Vec::new();
        for (l, kernel) in (2..=data.levels()).zip(kernels) {
            kernels::check_dim(data.dim(), kernel.dim())?;
            let (design, y, h) = level_inputs(&data, l, &trends[l - 1], 2)?;
            let core = GpCore::build(design, y, h, kernel, nuggets[l - 1], Sigma2::Estimate, None)?;
            upper.push(Level {
                core,
                trend: trends[l - 1],
                log_likelihood: None,
            });
        }
        Ok(Self { data, base, upper })
    }

    pub fn levels(&self) -> usize {
        self.data.levels()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn data(&self) -> &MultiFidelityData {
        &self.data
    }

    /// The level-1 kriging model.
    pub fn base(&self) -> &KrigingModel {
        &self.base
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.levels() {
            return Err(Error::Argument(format!(
                "level {level} outside 1..={}",
                self.levels()
            )));
        }
        Ok(())
    }

    /// `ρ̂_{level-1}`, the scale linking `level` to the level below; 0 at
    /// level 1.
    pub fn rho(&self, level: usize) -> f64 {
        if level <= 1 {
            0.0
        } else {
            self.upper[level - 2].core.coef[0]
        }
    }

    /// `(ρ̂_1, …, ρ̂_{s-1})`.
    pub fn rhos(&self) -> Vec<f64> {
        self.upper.iter().map(|u| u.core.coef[0]).collect()
    }

    pub fn beta(&self, level: usize) -> DVector<f64> {
        if level == 1 {
            self.base.beta().clone()
        } else {
            let c = &self.upper[level - 2].core.coef;
            c.rows(1, c.len() - 1).into_owned()
        }
    }

    pub fn sigma2(&self, level: usize) -> f64 {
        if level == 1 {
            self.base.sigma2()
        } else {
            self.upper[level - 2].core.sigma2
        }
    }

    pub fn kernel(&self, level: usize) -> &CorrelationKernel {
        if level == 1 {
            self.base.kernel()
        } else {
            &self.upper[level - 2].core.kernel
        }
    }

    pub fn nugget(&self, level: usize) -> f64 {
        if level == 1 {
            self.base.nugget()
        } else {
            self.upper[level - 2].core.nugget
        }
    }

    pub fn trend(&self, level: usize) -> TrendBasis {
        if level == 1 {
            self.base.trend()
        } else {
            self.upper[level - 2].trend
        }
    }

    pub fn log_likelihood(&self, level: usize) -> Option<f64> {
        if level == 1 {
            self.base.log_likelihood()
        } else {
            self.upper[level - 2].log_likelihood
        }
    }

    /// Fitted length-scales of every level.
    pub fn thetas(&self) -> Vec<Vec<f64>> {
        (1..=self.levels()).map(|l| self.kernel(l).theta().to_vec()).collect()
    }

    /// Means `μ^k(x)` and raw bias variances `σ²_{δ^k}(x)` for `k = 1..=level`.
    fn trace(&self, x: &[f64], level: usize) -> (Vec<f64>, Vec<f64>) {
        let mut means = Vec::with_capacity(level);
        let mut bias = Vec::with_capacity(level);
        means.push(self.base.mean_unchecked(x));
        bias.push(self.base.raw_var(x));
        for u in &self.upper[..level - 1] {
            let r = u.core.corr_vec(x);
            let h = u.regressor(*means.last().expect("level 1 present"), x);
            means.push(u.core.mean_with(&r, &h));
            bias.push(u.core.var_with(&r, &h));
        }
        (means, bias)
    }

    /// `μ^l(x)`.
    pub fn predict_mean(&self, x: &[f64], level: usize) -> Result<f64> {
        self.check_level(level)?;
        kernels::check_dim(self.dim(), x.len())?;
        Ok(self.mean_unchecked(x, level))
    }

    pub(crate) fn mean_unchecked(&self, x: &[f64], level: usize) -> f64 {
        let mut m = self.base.mean_unchecked(x);
        for u in &self.upper[..level - 1] {
            m = u.core.mean_with(&u.core.corr_vec(x), &u.regressor(m, x));
        }
        m
    }

    /// `σ²_{δ^level}(x)`, round-off negatives clamped.
    pub fn level_variance(&self, x: &[f64], level: usize) -> Result<f64> {
        self.check_level(level)?;
        kernels::check_dim(self.dim(), x.len())?;
        let (_, bias) = self.trace(x, level);
        clamp_variance(bias[level - 1], self.sigma2(level))
    }

    /// Clamped bias variances of levels `1..=level`.
    pub(crate) fn bias_unchecked(&self, x: &[f64], level: usize) -> Vec<f64> {
        let (_, bias) = self.trace(x, level);
        bias.into_iter().map(|v| v.max(0.0)).collect()
    }

    /// `k^l(x, x) = ρ̂²_{l-1} k^{l-1}(x, x) + σ²_{δ^l}(x)`.
    pub fn predict_var(&self, x: &[f64], level: usize) -> Result<f64> {
        self.check_level(level)?;
        kernels::check_dim(self.dim(), x.len())?;
        let (_, bias) = self.trace(x, level);
        let mut total = 0.0;
        for (k, b) in bias.into_iter().enumerate() {
            let b = clamp_variance(b, self.sigma2(k + 1))?;
            total = self.rho(k + 1).powi(2) * total + b;
        }
        Ok(total)
    }

    pub(crate) fn var_unchecked(&self, x: &[f64], level: usize) -> f64 {
        let bias = self.bias_unchecked(x, level);
        let mut total = 0.0;
        for (k, b) in bias.into_iter().enumerate() {
            total = self.rho(k + 1).powi(2) * total + b;
        }
        total
    }

    /// Per-level contributions to `k^level(x, x)`.
    pub fn variance_decomposition(&self, x: &[f64], level: usize) -> Result<LevelVarianceProfile> {
        self.check_level(level)?;
        kernels::check_dim(self.dim(), x.len())?;
        let (_, raw) = self.trace(x, level);
        let bias = raw
            .into_iter()
            .enumerate()
            .map(|(k, b)| clamp_variance(b, self.sigma2(k + 1)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.profile(bias))
    }

    pub(crate) fn profile(&self, bias: Vec<f64>) -> LevelVarianceProfile {
        let level = bias.len();
        let weighted = (0..level)
            .map(|i| bias[i] * self.rho_product(i + 1, level))
            .collect();
        let mut total = 0.0;
        for (k, b) in bias.iter().enumerate() {
            total = self.rho(k + 1).powi(2) * total + b;
        }
        LevelVarianceProfile {
            bias,
            weighted,
            total,
        }
    }

    /// `Π_{j=i}^{l-1} ρ̂_j²` (1 when `i = l`).
    pub fn rho_product(&self, i: usize, l: usize) -> f64 {
        (i..l).map(|j| self.rho(j + 1).powi(2)).product()
    }

    /// Posterior covariance `k^l(x, x̃)`.
    pub fn predict_cov(&self, x: &[f64], xt: &[f64], level: usize) -> Result<f64> {
        self.check_level(level)?;
        kernels::check_dim(self.dim(), x.len())?;
        kernels::check_dim(self.dim(), xt.len())?;
        let mut k = self.base.predict_cov(x, xt)?;
        let (mut m, mut mt) = (self.base.mean_unchecked(x), self.base.mean_unchecked(xt));
        for u in &self.upper[..level - 1] {
            let (r, rt) = (u.core.corr_vec(x), u.core.corr_vec(xt));
            let (h, ht) = (u.regressor(m, x), u.regressor(mt, xt));
            k = u.core.coef[0].powi(2) * k + u.core.cov_with(x, &r, &h, xt, &rt, &ht);
            m = u.core.mean_with(&r, &h);
            mt = u.core.mean_with(&rt, &ht);
        }
        Ok(k)
    }

    /// Conditions levels `1..=level` on fantasized observations at `x`
    /// equal to the current means. Every parameter stays frozen.
    ///
    /// A point already run at the coarsest levels is only added where it is
    /// missing; a point already run at every level up to `level` is a
    /// degenerate update.
    pub fn liar_condition(&self, x: &[f64], level: usize) -> Result<Self> {
        self.check_level(level)?;
        kernels::check_dim(self.dim(), x.len())?;
        let mut first = level + 1;
        let mut point = x.to_vec();
        for l in 1..=level {
            match self.data.locate(l, x, COINCIDENCE_TOL) {
                Some(i) => point = kernels::row_vec(self.data.design(l), i),
                None => {
                    first = l;
                    break;
                }
            }
        }
        if first > level {
            let index = self.data.locate(level, x, COINCIDENCE_TOL).unwrap_or(0);
            return Err(Error::DegenerateUpdate { index });
        }
        let (means, _) = self.trace(&point, level);
        let mut data = self.data.clone();
        data.add_runs(&point, first, &means[first - 1..level])?;

        let base = if first == 1 {
            self.base.liar_condition(&point)?
        } else {
            self.base.clone()
        };
        let mut upper = self.upper.clone();
        for l in first.max(2)..=level {
            let u = &self.upper[l - 2];
            // Known coarse output where the point was already run, the
            // fantasy otherwise; either way the value now stored in `data`.
            let below = data.n(l - 1) - 1;
            let coarse = if l > first {
                data.outputs(l - 1)[below]
            } else {
                let idx = data.locate(l - 1, &point, NESTING_TOL).expect("checked above");
                data.outputs(l - 1)[idx]
            };
            let core = u.core.append(&point, means[l - 1], &u.regressor(coarse, &point))?;
            upper[l - 2] = Level {
                core,
                trend: u.trend,
                log_likelihood: None,
            };
        }
        Ok(Self { data, base, upper })
    }

    /// `ε_{LOO-CV,l}(x_i^l)` and `σ²_{LOO-CV,l}(x_i^l)`, with the point
    /// removed from every level up to `level`.
    pub fn loocv(&self, level: usize, i: usize) -> Result<(f64, f64)> {
        self.check_level(level)?;
        let idx: Vec<usize> = (1..=level)
            .map(|j| self.data.index(level, i, j))
            .collect::<Result<_>>()?;
        let first = loo_point(&self.base.core, idx[0], None)?;
        let (mut err, mut var) = (first.error, first.variance);
        for l in 2..=level {
            let (own, rho) = self.own_loo(l, idx[l - 1], err)?;
            err = rho * err + own.error;
            var = rho * rho * var + own.variance;
        }
        Ok((err, var))
    }

    pub fn loocv_error(&self, level: usize, i: usize) -> Result<f64> {
        Ok(self.loocv(level, i)?.0)
    }

    pub fn loocv_var(&self, level: usize, i: usize) -> Result<f64> {
        Ok(self.loocv(level, i)?.1)
    }

    /// Level-`l` deletion of point `i`, given the level below's LOO error.
    fn own_loo(&self, l: usize, i: usize, coarse_error: f64) -> Result<(crate::loocv::LooPoint, f64)> {
        let core = &self.upper[l - 2].core;
        let mut shift = DVector::zeros(core.regressors.ncols());
        shift[0] = -coarse_error;
        let own = loo_point(core, i, Some(&shift))?;
        let rho = own.coef[0];
        Ok((own, rho))
    }

    /// LOO-CV diagnostics of every level, computed bottom-up.
    pub fn loocv_diagnostics(&self) -> Result<MfDiagnostics> {
        let mut levels: Vec<LevelDiagnostics> = Vec::with_capacity(self.levels());
        for l in 1..=self.levels() {
            let n = self.data.n(l);
            let mut d = LevelDiagnostics {
                errors: Vec::with_capacity(n),
                variances: Vec::with_capacity(n),
                own_errors: Vec::with_capacity(n),
                own_variances: Vec::with_capacity(n),
                rho_minus: Vec::with_capacity(n),
                ratios: Vec::with_capacity(n),
            };
            for i in 0..n {
                let (own_e, own_s, rho, err, var) = if l == 1 {
                    let p = loo_point(&self.base.core, i, None)?;
                    (p.error, p.variance, 0.0, p.error, p.variance)
                } else {
                    let j = self.data.parent[l - 1][i];
                    let below = &levels[l - 2];
                    let (pe, pv) = (below.errors[j], below.variances[j]);
                    let (own, rho) = self.own_loo(l, i, pe)?;
                    let err = rho * pe + own.error;
                    let var = rho * rho * pv + own.variance;
                    (own.error, own.variance, rho, err, var)
                };
                if !(own_s > 0.0) {
                    return Err(Error::Diagnostics {
                        level: l,
                        index: i,
                        reason: format!("LOO variance increment {own_s:e} is not positive"),
                    });
                }
                d.errors.push(err);
                d.variances.push(var);
                d.own_errors.push(own_e);
                d.own_variances.push(own_s);
                d.rho_minus.push(rho);
                d.ratios.push(cap_ratio(own_e * own_e / own_s, i));
            }
            levels.push(d);
        }
        Ok(MfDiagnostics { levels })
    }

    pub fn snapshot(&self) -> CokrigingSnapshot {
        let mut levels = vec![LevelSnapshot::from_kriging(self.base.snapshot())];
        for (k, u) in self.upper.iter().enumerate() {
            levels.push(LevelSnapshot {
                design: kernels::design_rows(&u.core.design),
                outputs: self.data.outputs(k + 2).iter().cloned().collect(),
                trend: u.trend.kind,
                kernel: u.core.kernel.family,
                theta: u.core.kernel.theta().to_vec(),
                coef: u.core.coef.iter().cloned().collect(),
                sigma2: u.core.sigma2,
                nugget: u.core.nugget,
            });
        }
        CokrigingSnapshot {
            format: COKRIGING_FORMAT.to_string(),
            levels,
        }
    }

    pub fn from_snapshot(s: &CokrigingSnapshot) -> Result<Self> {
        if s.format != COKRIGING_FORMAT {
            return Err(Error::Config(format!("unknown model format `{}`", s.format)));
        }
        if s.levels.is_empty() {
            return Err(Error::Config("snapshot has no levels".into()));
        }
        let designs = s
            .levels
            .iter()
            .map(|l| kernels::design_matrix(&l.design))
            .collect::<Result<Vec<_>>>()?;
        let outputs = s.levels.iter().map(|l| l.outputs.clone()).collect();
        let data = MultiFidelityData::new(designs, outputs)?;
        let first = &s.levels[0];
        let base = KrigingModel::with_frozen(
            data.design(1),
            data.outputs(1).as_slice(),
            TrendBasis::new(first.trend, data.dim()),
            CorrelationKernel::new(first.kernel, first.theta.clone())?,
            &first.coef,
            first.sigma2,
            first.nugget,
        )?;
        let mut upper = Vec::new();
        for (k, ls) in s.levels.iter().enumerate().skip(1) {
            let trend = TrendBasis::new(ls.trend, data.dim());
            let (design, y, h) = level_inputs(&data, k + 1, &trend, 2)?;
            kernels::check_dim(h.ncols(), ls.coef.len())?;
            let core = GpCore::build(
                design,
                y,
                h,
                CorrelationKernel::new(ls.kernel, ls.theta.clone())?,
                ls.nugget,
                Sigma2::Fixed(ls.sigma2),
                Some(DVector::from_column_slice(&ls.coef)),
            )?;
            upper.push(Level {
                core,
                trend,
                log_likelihood: None,
            });
        }
        Ok(Self { data, base, upper })
    }
}

/// Design, outputs and `H_l` of level `l ≥ 2`, after the size check
/// `n_l ≥ p_l + spare`. Fitted models need `spare = 3` so that every LOO
/// deletion keeps a positive variance divisor.
fn level_inputs(
    data: &MultiFidelityData,
    l: usize,
    trend: &TrendBasis,
    spare: usize,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let design = data.design(l).clone();
    let required = trend.size() + spare;
    if design.nrows() < required {
        return Err(Error::InsufficientPoints {
            required,
            available: design.nrows(),
        });
    }
    let f = trend.matrix(&design);
    let mut h = DMatrix::zeros(design.nrows(), f.ncols() + 1);
    h.set_column(0, &data.coarse_outputs(l));
    h.columns_mut(1, f.ncols()).copy_from(&f);
    Ok((design, data.outputs(l).clone(), h))
}

pub const COKRIGING_FORMAT: &str = "seqdesign-cokriging/1";

/// One level of a [`CokrigingSnapshot`]. `coef` is `β` at level 1 and
/// `(ρ, β)` above it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSnapshot {
    pub design: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
    pub trend: TrendKind,
    pub kernel: KernelFamily,
    pub theta: Vec<f64>,
    pub coef: Vec<f64>,
    pub sigma2: f64,
    pub nugget: f64,
}

impl LevelSnapshot {
    fn from_kriging(k: KrigingSnapshot) -> Self {
        Self {
            design: k.design,
            outputs: k.outputs,
            trend: k.trend,
            kernel: k.kernel,
            theta: k.theta,
            coef: k.beta,
            sigma2: k.sigma2,
            nugget: k.nugget,
        }
    }
}

/// JSON form of a co-kriging model: the kriging fields per level, coarsest
/// first, with `ρ` leading each finer level's coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CokrigingSnapshot {
    pub format: String,
    pub levels: Vec<LevelSnapshot>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::design_matrix;
    use rand::Rng;

    fn se(theta: Vec<f64>) -> CorrelationKernel {
        CorrelationKernel::new(KernelFamily::SquaredExponential, theta).unwrap()
    }

    fn coarse_fn(x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(m, v)| (3.0 * v + m as f64).sin()).sum::<f64>()
    }

    fn fine_fn(x: &[f64]) -> f64 {
        1.7 * coarse_fn(x) + 0.4 * (5.0 * x[0]).cos() + 0.3
    }

    fn finest_fn(x: &[f64]) -> f64 {
        0.8 * fine_fn(x) - 0.2 * (4.0 * x[x.len() - 1]).sin()
    }

    /// Nested random designs with sizes `sizes` (coarsest first).
    fn nested_data(seed: u64, sizes: &[usize], d: usize) -> MultiFidelityData {
        let mut rng = seeds::rng(seed);
        let pts: Vec<Vec<f64>> = (0..sizes[0])
            .map(|_| (0..d).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let fns: [fn(&[f64]) -> f64; 3] = [coarse_fn, fine_fn, finest_fn];
        let designs = sizes
            .iter()
            .map(|&n| design_matrix(&pts[..n]).unwrap())
            .collect();
        let outputs = sizes
            .iter()
            .enumerate()
            .map(|(l, &n)| pts[..n].iter().map(|p| fns[l](p)).collect())
            .collect();
        MultiFidelityData::new(designs, outputs).unwrap()
    }

    fn fixed_model(seed: u64, sizes: &[usize], d: usize, trends: &[TrendKind]) -> CokrigingModel {
        let data = nested_data(seed, sizes, d);
        let mut rng = seeds::rng(seeds::derive(seed, 99));
        let kernels = (0..sizes.len())
            .map(|_| se((0..d).map(|_| rng.gen_range(0.1..0.25) * d as f64).collect()))
            .collect();
        CokrigingModel::with_kernels(data, trends, kernels).unwrap()
    }

    fn probes(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = seeds::rng(seed);
        (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn nesting_is_checked() {
        let coarse = design_matrix(&[vec![0.1], vec![0.5], vec![0.9]]).unwrap();
        let fine = design_matrix(&[vec![0.5], vec![0.3]]).unwrap();
        let err = MultiFidelityData::new(vec![coarse.clone(), fine], vec![vec![0.0; 3], vec![0.0; 2]]);
        assert!(matches!(err, Err(Error::Nesting(_))));
        let fine = design_matrix(&[vec![0.9], vec![0.1]]).unwrap();
        let data = MultiFidelityData::new(vec![coarse, fine], vec![vec![0.0; 3], vec![1.0; 2]]).unwrap();
        assert_eq!(data.index(2, 0, 1).unwrap(), 2);
        assert_eq!(data.index(2, 1, 1).unwrap(), 0);
        assert_eq!(data.index(2, 1, 2).unwrap(), 1);
    }

    #[test]
    fn add_runs_keeps_nesting() {
        let mut data = nested_data(3, &[6, 3], 2);
        data.add_runs(&[0.5, 0.5], 1, &[1.0, 2.0]).unwrap();
        assert_eq!((data.n(1), data.n(2)), (7, 4));
        assert_eq!(data.index(2, 3, 1).unwrap(), 6);
        // A coarse-only point promoted later to the fine level.
        data.add_runs(&[0.25, 0.75], 1, &[3.0]).unwrap();
        data.add_runs(&[0.25, 0.75], 2, &[4.0]).unwrap();
        assert_eq!(data.index(2, 4, 1).unwrap(), 7);
        assert!(matches!(
            data.add_runs(&[0.9, 0.9], 2, &[1.0]),
            Err(Error::Nesting(_))
        ));
        assert!(matches!(
            data.add_runs(&[0.25, 0.75], 2, &[1.0]),
            Err(Error::Nesting(_))
        ));
        let rebuilt = MultiFidelityData::new(
            vec![data.design(1).clone(), data.design(2).clone()],
            vec![
                data.outputs(1).iter().cloned().collect(),
                data.outputs(2).iter().cloned().collect(),
            ],
        )
        .unwrap();
        assert_eq!(rebuilt, data);
    }

    #[test]
    fn fewer_than_p_plus_three_rejected() {
        let data = nested_data(4, &[8, 3], 1);
        let r = CokrigingModel::with_kernels(data, &[TrendKind::Constant], vec![se(vec![0.1]); 2]);
        assert!(matches!(r, Err(Error::InsufficientPoints { required: 4, .. })));
    }

    #[test]
    fn pure_scaling_recovers_rho() {
        let mut rng = seeds::rng(11);
        let pts: Vec<Vec<f64>> = (0..9).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let y1: Vec<f64> = pts.iter().map(|p| coarse_fn(p)).collect();
        let y2: Vec<f64> = y1[..5].iter().map(|v| 2.0 * v).collect();
        let data = MultiFidelityData::new(
            vec![design_matrix(&pts).unwrap(), design_matrix(&pts[..5]).unwrap()],
            vec![y1, y2],
        )
        .unwrap();
        let opts = CokrigingOptions {
            seed: 5,
            ..Default::default()
        };
        let m = CokrigingModel::fit(data, &opts).unwrap();
        assert!((m.rho(2) - 2.0).abs() < 1e-8, "ρ̂ = {}", m.rho(2));
        assert!(m.sigma2(2) < 1e-12 * m.sigma2(1));
        for x in probes(12, 20, 2) {
            let two = 2.0 * m.predict_mean(&x, 1).unwrap();
            assert!((m.predict_mean(&x, 2).unwrap() - two).abs() < 1e-8 * two.abs().max(1.0));
        }
        for i in 0..5 {
            let e1 = m.loocv_error(1, m.data().index(2, i, 1).unwrap()).unwrap();
            let e2 = m.loocv_error(2, i).unwrap();
            assert!((e2 - 2.0 * e1).abs() < 1e-8 * e1.abs().max(1.0), "{e2} vs {e1}");
        }
    }

    #[test]
    fn single_level_matches_kriging() {
        let mut rng = seeds::rng(21);
        let pts: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let design = design_matrix(&pts).unwrap();
        let y: Vec<f64> = pts.iter().map(|p| coarse_fn(p)).collect();
        for trend in [TrendKind::Constant, TrendKind::Linear] {
            let fo = FitOptions {
                trend,
                seed: 9,
                ..Default::default()
            };
            let k = KrigingModel::fit(&design, &y, &fo).unwrap();
            let opts = CokrigingOptions {
                trends: vec![trend],
                seed: 9,
                ..Default::default()
            };
            let c = CokrigingModel::fit(MultiFidelityData::single(design.clone(), y.clone()).unwrap(), &opts).unwrap();
            for x in probes(22, 50, 2) {
                assert!((k.predict_mean(&x).unwrap() - c.predict_mean(&x, 1).unwrap()).abs() <= 1e-12);
                assert!((k.predict_var(&x).unwrap() - c.predict_var(&x, 1).unwrap()).abs() <= 1e-12);
            }
            let kd = crate::loocv::loocv_diagnostics(&k).unwrap();
            let cd = c.loocv_diagnostics().unwrap();
            assert_eq!(kd, cd.to_loocv(1));
            for i in 0..10 {
                assert_eq!(c.loocv_var(1, i).unwrap(), crate::loocv::loocv_var(&k, i).unwrap());
            }
        }
    }

    /// Solves `A z = b` by LU, independently of the Cholesky-based core.
    fn lu_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a.clone().lu().solve(b).unwrap()
    }

    fn dense_corr(design: &DMatrix<f64>, k: &CorrelationKernel, nugget: f64) -> DMatrix<f64> {
        let n = design.nrows();
        DMatrix::from_fn(n, n, |i, j| {
            let c = k
                .correlation(&kernels::row_vec(design, i), &kernels::row_vec(design, j))
                .unwrap();
            if i == j {
                c + nugget
            } else {
                c
            }
        })
    }

    fn dense_vec(design: &DMatrix<f64>, k: &CorrelationKernel, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(design.nrows(), 1, |i, _| {
            k.correlation(&kernels::row_vec(design, i), x).unwrap()
        })
    }

    #[test]
    fn dense_oracle_for_coefficients_and_mean() {
        let m = fixed_model(31, &[8, 5], 1, &[TrendKind::Constant]);
        let data = m.data();
        // Level 1 by hand.
        let d1 = data.design(1);
        let r1 = dense_corr(d1, m.kernel(1), m.nugget(1));
        let f1 = DMatrix::from_element(8, 1, 1.0);
        let y1 = DMatrix::from_column_slice(8, 1, data.outputs(1).as_slice());
        let ri_f1 = lu_solve(&r1, &f1);
        let b1 = lu_solve(&(f1.transpose() * &ri_f1), &(ri_f1.transpose() * &y1));
        let w1 = lu_solve(&r1, &(&y1 - &f1 * &b1));
        // Level 2 by hand: H = [y1(D2) 1].
        let d2 = data.design(2);
        let r2 = dense_corr(d2, m.kernel(2), m.nugget(2));
        let mut h = DMatrix::from_element(5, 2, 1.0);
        for i in 0..5 {
            h[(i, 0)] = data.outputs(1)[data.index(2, i, 1).unwrap()];
        }
        let y2 = DMatrix::from_column_slice(5, 1, data.outputs(2).as_slice());
        let ri_h = lu_solve(&r2, &h);
        let c = lu_solve(&(h.transpose() * &ri_h), &(ri_h.transpose() * &y2));
        assert!(rel(c[0], m.rho(2)) < 1e-8, "{} vs {}", c[0], m.rho(2));
        assert!(rel(c[1], m.beta(2)[0]) < 1e-8);
        let w2 = lu_solve(&r2, &(&y2 - &h * &c));
        let resid: DMatrix<f64> = &y2 - &h * &c;
        let s2 = (resid.transpose() * &w2)[(0, 0)] / (5 - 1 - 1) as f64;
        assert!(rel(s2, m.sigma2(2)) < 1e-8);
        for x in probes(32, 10, 1) {
            let mu1 = b1[0] + (dense_vec(d1, m.kernel(1), &x).transpose() * &w1)[(0, 0)];
            let mu2 = c[0] * mu1 + c[1] + (dense_vec(d2, m.kernel(2), &x).transpose() * &w2)[(0, 0)];
            assert!(rel(mu2, m.predict_mean(&x, 2).unwrap()) < 1e-8);
        }
    }

    #[test]
    fn interpolates_every_level() {
        let m = fixed_model(41, &[12, 7, 4], 2, &[TrendKind::Constant]);
        for l in 1..=3 {
            for i in 0..m.data().n(l) {
                let x = kernels::row_vec(m.data().design(l), i);
                let y = m.data().outputs(l)[i];
                assert!(rel(m.predict_mean(&x, l).unwrap(), y) < 1e-6);
                assert!(m.predict_var(&x, l).unwrap() < 1e-6 * m.sigma2(1).max(m.sigma2(l)));
            }
        }
    }

    #[test]
    fn decomposition_identity() {
        for (seed, sizes) in [(51, vec![10, 6]), (52, vec![14, 8, 5])] {
            let m = fixed_model(seed, &sizes, 2, &[TrendKind::Linear, TrendKind::Constant, TrendKind::Constant][..sizes.len()]);
            for x in probes(seed + 1, 100, 2) {
                for l in 1..=sizes.len() {
                    let p = m.variance_decomposition(&x, l).unwrap();
                    let total = m.predict_var(&x, l).unwrap();
                    assert_eq!(p.total, total);
                    assert!((total - p.sum()).abs() <= 1e-10 * total);
                    assert!(p.bias.iter().all(|&b| b >= 0.0));
                }
            }
        }
    }

    #[test]
    fn covariance_consistent_with_variance() {
        let m = fixed_model(55, &[10, 6], 2, &[TrendKind::Constant]);
        let ps = probes(56, 10, 2);
        for p in &ps {
            let v = m.predict_var(p, 2).unwrap();
            assert!((m.predict_cov(p, p, 2).unwrap() - v).abs() <= 1e-10 * v.max(1e-12));
        }
        for w in ps.windows(2) {
            let a = m.predict_cov(&w[0], &w[1], 2).unwrap();
            let b = m.predict_cov(&w[1], &w[0], 2).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    /// Removes point `i` of level `level` from every level `≤ level` and
    /// refits with the same kernels and nuggets.
    fn delete_refit(m: &CokrigingModel, level: usize, i: usize) -> (CokrigingModel, Vec<f64>) {
        let data = m.data();
        let x = kernels::row_vec(data.design(level), i);
        let mut designs = Vec::new();
        let mut outputs = Vec::new();
        for j in 1..=level {
            let drop = data.index(level, i, j).unwrap();
            let keep: Vec<usize> = (0..data.n(j)).filter(|&k| k != drop).collect();
            let rows: Vec<Vec<f64>> = keep.iter().map(|&k| kernels::row_vec(data.design(j), k)).collect();
            designs.push(design_matrix(&rows).unwrap());
            outputs.push(keep.iter().map(|&k| data.outputs(j)[k]).collect());
        }
        let reduced = MultiFidelityData::new(designs, outputs).unwrap();
        let kinds: Vec<TrendKind> = (1..=level).map(|l| m.trend(l).kind).collect();
        let kernels = (1..=level).map(|l| m.kernel(l).clone()).collect();
        let nuggets: Vec<f64> = (1..=level).map(|l| m.nugget(l)).collect();
        (
            CokrigingModel::with_kernels_and_nuggets(reduced, &kinds, kernels, &nuggets).unwrap(),
            x,
        )
    }

    fn check_against_oracle(m: &CokrigingModel) {
        for l in 1..=m.levels() {
            for i in 0..m.data().n(l) {
                let (reduced, x) = delete_refit(m, l, i);
                let y = m.data().outputs(l)[i];
                let brute_e = y - reduced.predict_mean(&x, l).unwrap();
                let brute_v = reduced.predict_var(&x, l).unwrap();
                let (e, v) = m.loocv(l, i).unwrap();
                assert!(
                    (e - brute_e).abs() <= 1e-6 * brute_e.abs().max(1e-6 * y.abs().max(1.0)),
                    "level {l} point {i}: error {e} vs {brute_e}"
                );
                assert!(rel(v, brute_v) < 1e-6, "level {l} point {i}: var {v} vs {brute_v}");
            }
        }
    }

    #[test]
    fn multilevel_loo_matches_delete_from_all_levels() {
        for seed in 0..10 {
            let trend = if seed % 2 == 0 { TrendKind::Constant } else { TrendKind::Linear };
            let m = fixed_model(100 + seed, &[10, 6], 1 + (seed as usize % 2), &[TrendKind::Constant, trend]);
            check_against_oracle(&m);
        }
        for seed in 0..3 {
            let m = fixed_model(200 + seed, &[14, 9, 5], 2, &[TrendKind::Constant]);
            check_against_oracle(&m);
        }
    }

    #[test]
    fn diagnostics_agree_with_pointwise_loo() {
        let m = fixed_model(61, &[12, 7, 5], 2, &[TrendKind::Constant]);
        let d = m.loocv_diagnostics().unwrap();
        for l in 1..=3 {
            let ld = d.level(l);
            for i in 0..m.data().n(l) {
                let (e, v) = m.loocv(l, i).unwrap();
                assert_eq!((ld.errors[i], ld.variances[i]), (e, v));
                assert!(ld.own_variances[i] > 0.0);
                if l > 1 {
                    let j = m.data().index(l, i, l - 1).unwrap();
                    let below = d.level(l - 1);
                    let rho = ld.rho_minus[i];
                    assert!((ld.errors[i] - rho * below.errors[j] - ld.own_errors[i]).abs() < 1e-12 * (1.0 + e.abs()));
                    assert!(rel(ld.variances[i] - rho * rho * below.variances[j], ld.own_variances[i]) < 1e-9);
                }
            }
        }
    }

    #[test]
    fn constant_coarse_level_is_rank_deficient() {
        let mut rng = seeds::rng(71);
        let pts: Vec<Vec<f64>> = (0..9).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let data = MultiFidelityData::new(
            vec![design_matrix(&pts).unwrap(), design_matrix(&pts[..5]).unwrap()],
            vec![vec![3.0; 9], vec![-1.0; 5]],
        )
        .unwrap();
        // H = [3 1] has two proportional columns.
        let m = CokrigingModel::with_kernels(data, &[TrendKind::Constant], vec![se(vec![0.4, 0.4]); 2]);
        assert!(matches!(m, Err(Error::Trend(_))));
    }

    #[test]
    fn exactly_explained_levels_have_zero_loo_errors() {
        // y¹ lies in the level-1 trend span and y² = 2y¹ - 1 in the span of H.
        let mut rng = seeds::rng(72);
        let pts: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.gen()]).collect();
        let y1: Vec<f64> = pts.iter().map(|p| 1.0 + p[0]).collect();
        let y2: Vec<f64> = y1[..6].iter().map(|v| 2.0 * v - 1.0).collect();
        let data = MultiFidelityData::new(
            vec![design_matrix(&pts).unwrap(), design_matrix(&pts[..6]).unwrap()],
            vec![y1, y2],
        )
        .unwrap();
        let m = CokrigingModel::with_kernels(data, &[TrendKind::Linear, TrendKind::Constant], vec![se(vec![0.1]); 2]).unwrap();
        for l in 1..=2 {
            for i in 0..m.data().n(l) {
                let e = m.loocv_error(l, i).unwrap();
                assert!(e.abs() < 1e-8, "level {l} point {i}: {e}");
            }
        }
    }

    #[test]
    fn liar_never_increases_variance() {
        let m = fixed_model(81, &[12, 6], 2, &[TrendKind::Constant]);
        let ps = probes(82, 200, 2);
        for (level, x) in [(2usize, vec![0.37, 0.61]), (1, vec![0.8, 0.15])] {
            let c = m.liar_condition(&x, level).unwrap();
            assert_eq!(c.data().n(1), 13);
            assert_eq!(c.data().n(2), 6 + (level == 2) as usize);
            for p in &ps {
                for l in 1..=2 {
                    let before = m.predict_var(p, l).unwrap();
                    let after = c.predict_var(p, l).unwrap();
                    assert!(after <= before + 1e-10 * m.sigma2(1).max(m.sigma2(2)), "{after} > {before}");
                    let mb = m.predict_mean(p, l).unwrap();
                    assert!((c.predict_mean(p, l).unwrap() - mb).abs() < 1e-6 * mb.abs().max(1.0));
                }
            }
            assert!(c.predict_var(&x, level).unwrap() < 1e-6);
        }
    }

    #[test]
    fn liar_fills_missing_levels_only() {
        let m = fixed_model(83, &[12, 6], 2, &[TrendKind::Constant]);
        let coarse_only = kernels::row_vec(m.data().design(1), 9);
        let c = m.liar_condition(&coarse_only, 2).unwrap();
        assert_eq!((c.data().n(1), c.data().n(2)), (12, 7));
        assert_eq!(c.data().index(2, 6, 1).unwrap(), 9);
        let fine = kernels::row_vec(m.data().design(2), 1);
        assert!(matches!(m.liar_condition(&fine, 2), Err(Error::DegenerateUpdate { .. })));
    }

    #[test]
    fn snapshot_round_trip() {
        let data = nested_data(91, &[12, 6], 2);
        let opts = CokrigingOptions {
            trends: vec![TrendKind::Constant, TrendKind::Linear],
            mle: MleConfig {
                starts: 3,
                ..Default::default()
            },
            seed: 4,
            ..Default::default()
        };
        let m = CokrigingModel::fit(data, &opts).unwrap();
        let json = serde_json::to_string(&m.snapshot()).unwrap();
        let back = CokrigingModel::from_snapshot(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.snapshot(), m.snapshot());
        for x in probes(92, 20, 2) {
            assert_eq!(back.predict_mean(&x, 2).unwrap(), m.predict_mean(&x, 2).unwrap());
            assert_eq!(back.predict_var(&x, 2).unwrap(), m.predict_var(&x, 2).unwrap());
        }
    }
}
