//! Single-point acquisition criteria and the shared candidate grid.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design;
use crate::error::{Error, Result};
use crate::kernels::{self, sq_dist};
use crate::kriging::KrigingModel;
use crate::loocv::{Jackknife, LoocvDiagnostics};
use crate::seeds;

/// Grid points per input dimension for the default candidate grid.
pub const GRID_POINTS_PER_DIM: usize = 2000;
/// IMSE candidates per input dimension, taken from the head of the grid.
pub const IMSE_CANDIDATES_PER_DIM: usize = 500;
/// Maximin-LHS candidates per input dimension for the jackknife criterion.
pub const KLEICRIT_CANDIDATES_PER_DIM: usize = 100;
pub const MIN_GRID_POINTS: usize = 100;

const REFINE_MIN_STEP: f64 = 1e-4;
const REFINE_EVALS_PER_DIM: usize = 40;

/// Nearest-site partition of the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiPartition {
    sites: Vec<Vec<f64>>,
}

impl VoronoiPartition {
    pub fn new(sites: Vec<Vec<f64>>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Argument("a partition needs at least one site".into()));
        }
        let d = sites[0].len();
        if let Some(bad) = sites.iter().find(|s| s.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                got: bad.len(),
            });
        }
        Ok(Self { sites })
    }

    pub fn from_model(model: &KrigingModel) -> Self {
        Self {
            sites: kernels::design_rows(model.design()),
        }
    }

    pub fn sites(&self) -> &[Vec<f64>] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Index of the nearest site; the lowest index wins ties.
    pub fn index(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, s) in self.sites.iter().enumerate() {
            let d = sq_dist(s, x);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

pub fn voronoi_index(partition: &VoronoiPartition, x: &[f64]) -> usize {
    partition.index(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    /// Halton sequence with a seeded random shift.
    LowDiscrepancy,
    UniformRandom,
}

/// Points used both as argmax candidates and as the IMSE quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGrid {
    points: Vec<Vec<f64>>,
    kind: GridKind,
    seed: u64,
}

impl CandidateGrid {
    pub fn new(kind: GridKind, m: usize, d: usize, seed: u64) -> Result<Self> {
        if m < MIN_GRID_POINTS {
            return Err(Error::Argument(format!(
                "candidate grid needs at least {MIN_GRID_POINTS} points (got {m})"
            )));
        }
        if d == 0 {
            return Err(Error::Argument("candidate grid needs d ≥ 1".into()));
        }
        let mut rng = seeds::rng(seed);
        let points = match kind {
            GridKind::LowDiscrepancy => {
                let shift: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
                let bases = first_primes(d);
                (1..=m as u64)
                    .map(|i| {
                        bases
                            .iter()
                            .zip(&shift)
                            .map(|(&b, s)| (radical_inverse(i, b) + s).fract())
                            .collect()
                    })
                    .collect()
            }
            GridKind::UniformRandom => (0..m).map(|_| (0..d).map(|_| rng.gen()).collect()).collect(),
        };
        Ok(Self { points, kind, seed })
    }

    /// Shifted Halton grid with 2000 points per dimension.
    pub fn standard(d: usize, seed: u64) -> Result<Self> {
        Self::new(GridKind::LowDiscrepancy, GRID_POINTS_PER_DIM * d, d, seed)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Starting coordinate step for local refinement: half the typical
    /// spacing between grid points.
    pub(crate) fn refine_step(&self) -> f64 {
        0.5 * (self.len() as f64).powf(-1.0 / self.dim() as f64)
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    out
}

fn first_primes(k: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(k);
    let mut c = 2u64;
    while primes.len() < k {
        if primes.iter().all(|p| !c.is_multiple_of(*p)) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    MaxVar,
    MinImse,
    KleiCrit,
    AdjMmse,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Self::MaxVar, Self::MinImse, Self::KleiCrit, Self::AdjMmse];

    pub fn name(self) -> &'static str {
        match self {
            Self::MaxVar => "maxvar",
            Self::MinImse => "minimse",
            Self::KleiCrit => "kleicrit",
            Self::AdjMmse => "adjmmse",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::MaxVar => "largest kriging variance",
            Self::MinImse => "largest integrated variance reduction (liar update)",
            Self::KleiCrit => "largest jackknife variance over maximin-LHS candidates",
            Self::AdjMmse => "kriging variance inflated by the LOO ratio of its Voronoi cell",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown criterion `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub point: Vec<f64>,
    /// Criterion value at `point`.
    pub value: f64,
    /// Best candidate before local refinement.
    pub grid_index: usize,
}

/// `k_n(x,x) (1 + ratio of the Voronoi cell containing x)`.
pub fn adjusted_mse(
    model: &KrigingModel,
    diag: &LoocvDiagnostics,
    partition: &VoronoiPartition,
    x: &[f64],
) -> Result<f64> {
    kernels::check_dim(model.dim(), x.len())?;
    check_diag(diag, partition)?;
    Ok(adjusted_unchecked(model, diag, partition, x))
}

fn adjusted_unchecked(
    model: &KrigingModel,
    diag: &LoocvDiagnostics,
    partition: &VoronoiPartition,
    x: &[f64],
) -> f64 {
    model.var_unchecked(x) * (1.0 + diag.ratios[partition.index(x)])
}

fn check_diag(diag: &LoocvDiagnostics, partition: &VoronoiPartition) -> Result<()> {
    if diag.len() != partition.len() {
        return Err(Error::Dimension {
            expected: partition.len(),
            got: diag.len(),
        });
    }
    Ok(())
}

fn check_grid(model: &KrigingModel, grid: &CandidateGrid) -> Result<()> {
    kernels::check_dim(model.dim(), grid.dim())
}

/// First index of the largest value.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Coordinate pattern search that only accepts strict improvements.
pub(crate) fn refine(
    start: &[f64],
    value: f64,
    step: f64,
    f: impl Fn(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let d = start.len();
    let mut x = start.to_vec();
    let mut best = value;
    let mut h = step;
    let mut evals = 0;
    while h >= REFINE_MIN_STEP && evals < REFINE_EVALS_PER_DIM * d {
        let mut improved = false;
        for m in 0..d {
            for sign in [1.0, -1.0] {
                let c = (x[m] + sign * h).clamp(0.0, 1.0);
                if c == x[m] {
                    continue;
                }
                let mut cand = x.clone();
                cand[m] = c;
                let v = f(&cand);
                evals += 1;
                if v > best {
                    x = cand;
                    best = v;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    (x, best)
}

pub(crate) fn grid_search(
    grid: &CandidateGrid,
    candidates: &[Vec<f64>],
    local: bool,
    f: impl Fn(&[f64]) -> f64,
) -> Selection {
    let (grid_index, value) = argmax(candidates.iter().map(|x| f(x)));
    let start = &candidates[grid_index];
    let (point, value) = if local {
        refine(start, value, grid.refine_step(), &f)
    } else {
        (start.clone(), value)
    };
    Selection {
        point,
        value,
        grid_index,
    }
}

pub fn select_maxvar(model: &KrigingModel, grid: &CandidateGrid) -> Result<Selection> {
    check_grid(model, grid)?;
    Ok(grid_search(grid, grid.points(), true, |x| model.var_unchecked(x)))
}

pub fn select_adjmmse(
    model: &KrigingModel,
    diag: &LoocvDiagnostics,
    grid: &CandidateGrid,
) -> Result<Selection> {
    check_grid(model, grid)?;
    let partition = VoronoiPartition::from_model(model);
    check_diag(diag, &partition)?;
    Ok(grid_search(grid, grid.points(), true, |x| {
        adjusted_unchecked(model, diag, &partition, x)
    }))
}

/// Precomputed whitened cross terms for a fixed quadrature set, giving the
/// liar-update variance reduction `mean_u k_n(u,x)² / (k_n(x,x) + σ²η)`.
pub struct ImseQuadrature<'a> {
    model: &'a KrigingModel,
    points: &'a [Vec<f64>],
    /// `L⁻¹ r(u)` for every quadrature point (n × M).
    a: DMatrix<f64>,
    /// `C' (f(u) - F' R⁻¹ r(u))` with `C C' = (F'R⁻¹F)⁻¹` (p × M).
    b: DMatrix<f64>,
    gram_factor: DMatrix<f64>,
}

impl<'a> ImseQuadrature<'a> {
    pub fn new(model: &'a KrigingModel, points: &'a [Vec<f64>]) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| p.len() != model.dim()) {
            return Err(Error::Dimension {
                expected: model.dim(),
                got: p.len(),
            });
        }
        if points.is_empty() {
            return Err(Error::Argument("empty quadrature set".into()));
        }
        let core = &model.core;
        let gram_factor = core
            .gram_inv
            .clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Trend("trend Gram matrix is not positive definite".into()))?;
        let (a, b) = whiten_block(model, &gram_factor, points);
        Ok(Self {
            model,
            points,
            a,
            b,
            gram_factor,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reductions at every candidate, computed blockwise.
    pub fn reductions(&self, candidates: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(candidates.len());
        for chunk in candidates.chunks(256) {
            let (ac, bc) = whiten_block(self.model, &self.gram_factor, chunk);
            let mut cross = DMatrix::from_fn(self.points.len(), chunk.len(), |j, c| {
                self.model.kernel().corr(&self.points[j], &chunk[c])
            });
            cross.gemm_tr(-1.0, &self.a, &ac, 1.0);
            cross.gemm_tr(1.0, &self.b, &bc, 1.0);
            for c in 0..chunk.len() {
                let own = 1.0 - ac.column(c).norm_squared() + bc.column(c).norm_squared();
                out.push(self.finish(cross.column(c).norm_squared(), own));
            }
        }
        out
    }

    pub fn reduction(&self, x: &[f64]) -> f64 {
        let (ax, bx) = whiten_block(self.model, &self.gram_factor, std::slice::from_ref(&x.to_vec()));
        let ax = ax.column(0);
        let bx = bx.column(0);
        let mut ss = 0.0;
        for (j, u) in self.points.iter().enumerate() {
            let c = self.model.kernel().corr(u, x) - self.a.column(j).dot(&ax) + self.b.column(j).dot(&bx);
            ss += c * c;
        }
        let own = 1.0 - ax.norm_squared() + bx.norm_squared();
        self.finish(ss, own)
    }

    /// Turns correlation-scale sums into the variance-scale reduction.
    fn finish(&self, cross_ss: f64, own: f64) -> f64 {
        let s2 = self.model.sigma2();
        let denom = own.max(0.0) + self.model.nugget();
        s2 * cross_ss / (denom * self.points.len() as f64)
    }
}

fn whiten_block(
    model: &KrigingModel,
    gram_factor: &DMatrix<f64>,
    pts: &[Vec<f64>],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let core = &model.core;
    let n = core.n();
    let p = core.regressors.ncols();
    let mut a = DMatrix::zeros(n, pts.len());
    let mut b = DMatrix::zeros(p, pts.len());
    let trend = model.trend();
    for (c, x) in pts.iter().enumerate() {
        let (ax, ux) = core.whiten(&core.corr_vec(x), &trend.eval(x));
        a.set_column(c, &ax);
        let bx: DVector<f64> = gram_factor.transpose() * ux;
        b.set_column(c, &bx);
    }
    (a, b)
}

/// `∫ (k_n - k_{n+1})(u,u) du` over `quadrature` for a liar update at `x`.
pub fn imse_reduction(model: &KrigingModel, x: &[f64], quadrature: &[Vec<f64>]) -> Result<f64> {
    kernels::check_dim(model.dim(), x.len())?;
    Ok(ImseQuadrature::new(model, quadrature)?.reduction(x))
}

/// Maximizes the liar-update IMSE reduction.
///
/// The whole grid is the quadrature; the argmax runs over its first
/// `500·d` points and is then refined locally.
pub fn select_min_imse(model: &KrigingModel, grid: &CandidateGrid) -> Result<Selection> {
    check_grid(model, grid)?;
    let quad = ImseQuadrature::new(model, grid.points())?;
    Ok(select_min_imse_with(&quad, grid))
}

pub(crate) fn select_min_imse_with(quad: &ImseQuadrature<'_>, grid: &CandidateGrid) -> Selection {
    let k = (IMSE_CANDIDATES_PER_DIM * grid.dim()).min(grid.len());
    let candidates = &grid.points()[..k];
    let values = quad.reductions(candidates);
    let (grid_index, value) = argmax(values);
    let (point, value) = refine(&candidates[grid_index], value, grid.refine_step(), |x| quad.reduction(x));
    Selection {
        point,
        value,
        grid_index,
    }
}

/// Fresh maximin-LHS candidate set for the jackknife criterion.
pub fn kleicrit_candidates(d: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = KLEICRIT_CANDIDATES_PER_DIM * d;
    Ok(design::lhs_maximin(n, d, 200, seed)?.points)
}

/// Candidate with the largest jackknife variance (first one on ties).
pub fn select_kleicrit(model: &KrigingModel, candidates: &[Vec<f64>]) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Argument("no candidates".into()));
    }
    let jack = Jackknife::new(model)?;
    // values at round-off level of the outputs count as zero, so that
    // degenerate data falls back to the first candidate
    let scale = model.outputs().amax().max(1.0);
    let floor = (1e-12 * scale).powi(2);
    let values = candidates
        .iter()
        .map(|x| jack.variance(x).map(|v| if v <= floor { 0.0 } else { v }))
        .collect::<Result<Vec<_>>>()?;
    let (grid_index, value) = argmax(values);
    Ok(Selection {
        point: candidates[grid_index].clone(),
        value,
        grid_index,
    })
}
