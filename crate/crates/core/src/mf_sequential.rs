//! Multi-fidelity sequential engines: one-point level selection and
//! budgeted batch rounds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batch::{self, batch_pipeline, BatchConfig};
use crate::cokriging::{CokrigingModel, CokrigingOptions, MfDiagnostics, MultiFidelityData, NESTING_TOL};
use crate::criteria::{self, CandidateGrid, Criterion, Selection, VoronoiPartition};
use crate::error::{Error, Result};
use crate::kernels;
use crate::loocv::{csv_io, loocv_diagnostics};
use crate::problems::{normalized_rmse, BenchmarkProblem, TestSet};
use crate::seeds;

/// Per-level simulation times in integer time units (level 1 first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    times: Vec<u64>,
}

impl CostModel {
    pub fn new(times: Vec<u64>) -> Result<Self> {
        if times.is_empty() || times[0] == 0 {
            return Err(Error::Config("level times must be positive".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("level times {times:?} must increase strictly")));
        }
        Ok(Self { times })
    }

    pub fn levels(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[u64] {
        &self.times
    }

    /// `t^l` for a 1-based level.
    pub fn time(&self, level: usize) -> u64 {
        self.times[level - 1]
    }

    /// `B_{l/l-1} = t^l / t^{l-1}` for `l ≥ 2`.
    pub fn ratio(&self, level: usize) -> f64 {
        self.time(level) as f64 / self.time(level - 1) as f64
    }

    /// Cost of a new point run at `level` and every coarser one.
    pub fn nested_cost(&self, level: usize) -> u64 {
        self.times[..level].iter().sum()
    }

    /// `Σ_j Σ_{i≥j} q^i t^j`.
    pub fn allocation_cost(&self, q: &[usize]) -> u64 {
        q.iter()
            .enumerate()
            .map(|(i, &qi)| qi as u64 * self.nested_cost(i + 1))
            .sum()
    }
}

/// Distance (unit cube) under which a selected point is snapped onto an
/// existing design point.
pub const SNAP_TOL: f64 = 1e-3;

/// Largest number of allocations scored exhaustively.
pub const MAX_ALLOCATIONS: usize = 10_000;

/// Which variance proxy drives one-point level selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proxy {
    /// Raw co-kriging variances.
    Plain,
    /// Variances adjusted by the per-level LOO-CV increments.
    Adjusted,
}

fn check_point(model: &CokrigingModel, x: &[f64], level: usize) -> Result<()> {
    kernels::check_dim(model.dim(), x.len())?;
    if level == 0 || level > model.levels() {
        return Err(Error::Argument(format!("level {level} outside 1..={}", model.levels())));
    }
    Ok(())
}

/// Checks that `diag` belongs to `model` and has positive increments.
fn check_diagnostics(model: &CokrigingModel, diag: &MfDiagnostics) -> Result<()> {
    kernels::check_dim(model.levels(), diag.levels.len())?;
    for l in 1..=model.levels() {
        let d = diag.level(l);
        kernels::check_dim(model.data().n(l), d.len())?;
        if let Some(i) = d.own_variances.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::Diagnostics {
                level: l,
                index: i,
                reason: format!("LOO variance increment {:e} is not positive", d.own_variances[i]),
            });
        }
    }
    Ok(())
}

/// `Σ_{i≤l} σ²_{δ^i} (1 + adj_i) Π_{j=i}^{l-1} ρ_j² Π_m θ_i^m`.
fn weighted_reduction(model: &CokrigingModel, bias: &[f64], level: usize, adj: impl Fn(usize) -> f64) -> f64 {
    (1..=level)
        .map(|i| bias[i - 1] * (1.0 + adj(i)) * model.rho_product(i, level) * model.kernel(i).volume())
        .sum()
}

/// IMSE reduction proxy of a new point at `level`.
pub fn imse_red(model: &CokrigingModel, x: &[f64], level: usize) -> Result<f64> {
    check_point(model, x, level)?;
    Ok(weighted_reduction(model, &model.bias_unchecked(x, level), level, |_| 0.0))
}

/// [`imse_red`] with every bias variance inflated by the level's summed
/// LOO-CV increment ratios.
pub fn imse_red_adj(model: &CokrigingModel, diag: &MfDiagnostics, x: &[f64], level: usize) -> Result<f64> {
    check_point(model, x, level)?;
    check_diagnostics(model, diag)?;
    let sums: Vec<f64> = diag.levels.iter().map(|d| d.ratio_sum()).collect();
    Ok(weighted_reduction(model, &model.bias_unchecked(x, level), level, |i| sums[i - 1]))
}

/// Voronoi partitions of every level's design.
fn partitions(data: &MultiFidelityData) -> Vec<VoronoiPartition> {
    (1..=data.levels())
        .map(|l| VoronoiPartition::new(kernels::design_rows(data.design(l))).expect("levels are non-empty"))
        .collect()
}

/// Per-level ratio of the Voronoi cell containing `x`.
fn cell_ratios(diag: &MfDiagnostics, parts: &[VoronoiPartition], x: &[f64], level: usize) -> Vec<f64> {
    (0..level).map(|k| diag.levels[k].ratios[parts[k].index(x)]).collect()
}

/// `Σ_i σ²_{δ^i}(x) (1 + ratio_i(cell_i(x))) Π_{j=i}^{l-1} ρ_j²`: the
/// co-kriging analogue of the adjusted kriging variance.
pub fn adjusted_variance(model: &CokrigingModel, diag: &MfDiagnostics, x: &[f64], level: usize) -> Result<f64> {
    check_point(model, x, level)?;
    check_diagnostics(model, diag)?;
    let parts = partitions(model.data());
    Ok(adjusted_from_bias(model, &model.bias_unchecked(x, level), &cell_ratios(diag, &parts, x, level)))
}

fn adjusted_from_bias(model: &CokrigingModel, bias: &[f64], ratios: &[f64]) -> f64 {
    let mut total = 0.0;
    for (k, (b, r)) in bias.iter().zip(ratios).enumerate() {
        total = model.rho(k + 1).powi(2) * total + b * (1.0 + r);
    }
    total
}

fn total_from_bias(model: &CokrigingModel, bias: &[f64]) -> f64 {
    let mut total = 0.0;
    for (k, b) in bias.iter().enumerate() {
        total = model.rho(k + 1).powi(2) * total + b;
    }
    total
}

/// Batch ranking score at `level`: the localized adjusted bias variances
/// weighted by `Π ρ²` and the volume factors.
fn batch_score(model: &CokrigingModel, diag: &MfDiagnostics, parts: &[VoronoiPartition], x: &[f64], level: usize) -> f64 {
    let bias = model.bias_unchecked(x, level);
    let ratios = cell_ratios(diag, parts, x, level);
    weighted_reduction(model, &bias, level, |i| ratios[i - 1])
}

/// One point of an iteration, in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRun {
    pub point: Vec<f64>,
    /// Levels simulated at this point during the iteration.
    pub levels: Vec<usize>,
    pub criterion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub runs: Vec<PointRun>,
    /// Cumulative time spent on sequential runs.
    pub spent: u64,
    pub nrmse: Option<f64>,
    /// Cumulative count of added points run at the accurate level.
    pub accurate_points: usize,
    /// Cumulative count of added points.
    pub new_points: usize,
}

impl IterationRecord {
    /// Share of added points run at the accurate level (1 for single-level
    /// problems, 0 before any multi-level addition).
    pub fn accurate_fraction(&self, levels: usize) -> f64 {
        if levels == 1 {
            1.0
        } else if self.new_points == 0 {
            0.0
        } else {
            self.accurate_points as f64 / self.new_points as f64
        }
    }
}

/// Outcome of one sequential step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Advanced,
    /// The remaining budget cannot pay for any run.
    Exhausted,
}

/// A running sequential design: data, fitted model and time ledger.
#[derive(Debug, Clone)]
pub struct SequentialState {
    problem: BenchmarkProblem,
    model: CokrigingModel,
    opts: CokrigingOptions,
    grid: CandidateGrid,
    test: Option<TestSet>,
    spent: u64,
    accurate_points: usize,
    new_points: usize,
    log: Vec<IterationRecord>,
}

impl SequentialState {
    /// Fits the initial model and logs iteration 0.
    pub fn new(
        problem: BenchmarkProblem,
        data: MultiFidelityData,
        opts: CokrigingOptions,
        grid: CandidateGrid,
        test: Option<TestSet>,
    ) -> Result<Self> {
        if data.levels() != problem.n_levels() {
            return Err(Error::Config(format!(
                "{} data levels for a {}-level problem",
                data.levels(),
                problem.n_levels()
            )));
        }
        kernels::check_dim(problem.dim(), data.dim())?;
        kernels::check_dim(problem.dim(), grid.dim())?;
        let model = CokrigingModel::fit(data, &opts)?;
        let mut state = Self {
            problem,
            model,
            opts,
            grid,
            test,
            spent: 0,
            accurate_points: 0,
            new_points: 0,
            log: Vec::new(),
        };
        state.record(Vec::new())?;
        Ok(state)
    }

    pub fn model(&self) -> &CokrigingModel {
        &self.model
    }

    pub fn problem(&self) -> &BenchmarkProblem {
        &self.problem
    }

    pub fn grid(&self) -> &CandidateGrid {
        &self.grid
    }

    pub fn spent(&self) -> u64 {
        self.spent
    }

    pub fn log(&self) -> &[IterationRecord] {
        &self.log
    }

    pub fn levels(&self) -> usize {
        self.model.levels()
    }

    fn iteration(&self) -> usize {
        self.log.len()
    }

    /// NRMSE of the accurate-level mean on the test set.
    pub fn nrmse(&self) -> Result<Option<f64>> {
        let Some(test) = &self.test else {
            return Ok(None);
        };
        let top = self.levels();
        let pred: Vec<f64> = test.unit.iter().map(|u| self.model.mean_unchecked(u, top)).collect();
        Ok(Some(normalized_rmse(&pred, &test.truth)?))
    }

    fn record(&mut self, runs: Vec<PointRun>) -> Result<()> {
        let nrmse = self.nrmse()?;
        self.log.push(IterationRecord {
            iteration: self.log.len(),
            runs,
            spent: self.spent,
            nrmse,
            accurate_points: self.accurate_points,
            new_points: self.new_points,
        });
        Ok(())
    }

    /// Simulates `x` at levels `first..=last` and appends the runs.
    fn simulate(&mut self, data: &mut MultiFidelityData, x: &[f64], first: usize, last: usize) -> Result<()> {
        let values = (first..=last)
            .map(|l| self.problem.eval_unit(l, x))
            .collect::<Result<Vec<_>>>()?;
        data.add_runs(x, first, &values)?;
        self.spent += (first..=last).map(|l| self.problem.cost.time(l)).sum::<u64>();
        Ok(())
    }

    /// Re-estimates every parameter, warm-started from the current θ.
    fn refit(&mut self, data: MultiFidelityData) -> Result<()> {
        let mut opts = self.opts.clone();
        opts.seed = seeds::derive(seeds::derive(self.opts.seed, seeds::TAG_FIT), self.iteration() as u64);
        let warm = self.model.thetas();
        self.model = CokrigingModel::fit_warm(data, &opts, Some(&warm))?;
        Ok(())
    }

    fn physical(&self, u: &[f64]) -> Vec<f64> {
        self.problem.domain.from_unit(u)
    }

    /// Deepest level already holding a point within [`SNAP_TOL`] of `x`,
    /// with that point's coordinates.
    fn snap(&self, x: &[f64]) -> (usize, Vec<f64>) {
        let data = self.model.data();
        match data.locate(1, x, SNAP_TOL) {
            None => (0, x.to_vec()),
            Some(i) => {
                let p = kernels::row_vec(data.design(1), i);
                let depth = (2..=data.levels())
                    .take_while(|&l| data.locate(l, &p, NESTING_TOL).is_some())
                    .last()
                    .unwrap_or(1);
                (depth, p)
            }
        }
    }
}

/// Where the level walk decided to stop for one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelDecision {
    pub point: Vec<f64>,
    pub criterion: f64,
    /// Highest level to run, before snapping and budget capping.
    pub run_to: usize,
    /// Mean of each level's bias variance over the grid.
    pub imse: Vec<f64>,
}

/// Point choice and level walk of a one-point step, without simulating.
pub fn choose_level(
    model: &CokrigingModel,
    diag: Option<&MfDiagnostics>,
    grid: &CandidateGrid,
    ratios: &[f64],
) -> Result<LevelDecision> {
    let s = model.levels();
    kernels::check_dim(model.dim(), grid.dim())?;
    if let Some(d) = diag {
        check_diagnostics(model, d)?;
    }
    let parts = diag.map(|_| partitions(model.data()));
    let objective = |x: &[f64], bias: &[f64]| match (diag, &parts) {
        (Some(d), Some(p)) => adjusted_from_bias(model, bias, &cell_ratios(d, p, x, s)),
        _ => total_from_bias(model, bias),
    };
    let mut imse = vec![0.0; s];
    for x in grid.points() {
        for (acc, b) in imse.iter_mut().zip(model.bias_unchecked(x, s)) {
            *acc += b;
        }
    }
    for v in &mut imse {
        *v /= grid.len() as f64;
    }
    let Selection { point, value: criterion, .. } =
        criteria::grid_search(grid, grid.points(), true, |x| objective(x, &model.bias_unchecked(x, s)));

    let bias = model.bias_unchecked(&point, s);
    let sums: Vec<f64> = match diag {
        Some(d) => d.levels.iter().map(|l| l.ratio_sum()).collect(),
        None => vec![0.0; s],
    };
    let red = |l: usize| weighted_reduction(model, &bias, l, |i| sums[i - 1]);
    let mut run_to = s;
    for l in 2..=s {
        if bias[l - 1] < imse[l - 1] {
            run_to = l - 1;
            break;
        }
        let (below, here) = (red(l - 1), red(l));
        if !(here > 0.0) || below / here > 1.0 / ratios[l - 2] {
            run_to = l - 1;
            break;
        }
    }
    Ok(LevelDecision {
        point,
        criterion,
        run_to,
        imse,
    })
}

/// One level-selecting step under a total time budget.
pub fn step_one_point(state: &mut SequentialState, proxy: Proxy, budget: u64) -> Result<StepOutcome> {
    let s = state.levels();
    let remaining = budget.saturating_sub(state.spent);
    let cost = state.problem.cost.clone();
    // Nothing affordable at all: stop before paying for the selection.
    if remaining < cost.time(1) {
        return Ok(StepOutcome::Exhausted);
    }
    let diag = match proxy {
        Proxy::Plain => None,
        Proxy::Adjusted => Some(state.model.loocv_diagnostics()?),
    };
    let ratios: Vec<f64> = (2..=s).map(|l| cost.ratio(l)).collect();
    let decision = choose_level(&state.model, diag.as_ref(), &state.grid, &ratios)?;
    let (depth, point) = state.snap(&decision.point);
    if depth == s {
        log::warn!("selected point {point:?} is already run at every level");
        return Ok(StepOutcome::Exhausted);
    }
    // A snapped point still needs at least one new run.
    let mut last = decision.run_to.max(depth + 1);
    while last > depth && (depth + 1..=last).map(|l| cost.time(l)).sum::<u64>() > remaining {
        last -= 1;
    }
    if last == depth {
        return Ok(StepOutcome::Exhausted);
    }
    let mut data = state.model.data().clone();
    state.simulate(&mut data, &point, depth + 1, last)?;
    state.new_points += 1;
    if last == s {
        state.accurate_points += 1;
    }
    state.refit(data)?;
    let run = PointRun {
        point: state.physical(&point),
        levels: (depth + 1..=last).collect(),
        criterion: decision.criterion,
    };
    state.record(vec![run])?;
    Ok(StepOutcome::Advanced)
}

/// One single-level step with a kriging criterion; requires `s = 1`.
pub fn step_kriging(state: &mut SequentialState, criterion: Criterion, budget: u64) -> Result<StepOutcome> {
    if state.levels() != 1 {
        return Err(Error::Config(format!(
            "{criterion} is a single-level criterion; the problem has {} levels",
            state.levels()
        )));
    }
    if budget.saturating_sub(state.spent) < state.problem.cost.time(1) {
        return Ok(StepOutcome::Exhausted);
    }
    let model = state.model.base();
    let it = state.iteration() as u64;
    let sel = match criterion {
        Criterion::MaxVar => criteria::select_maxvar(model, &state.grid)?,
        Criterion::MinImse => criteria::select_min_imse(model, &state.grid)?,
        Criterion::AdjMmse => criteria::select_adjmmse(model, &loocv_diagnostics(model)?, &state.grid)?,
        Criterion::KleiCrit => {
            let seed = seeds::derive(seeds::derive(state.opts.seed, seeds::TAG_CANDIDATES), it);
            let candidates = criteria::kleicrit_candidates(model.dim(), seed)?;
            criteria::select_kleicrit(model, &candidates)?
        }
    };
    add_single_points(state, vec![sel])?;
    Ok(StepOutcome::Advanced)
}

/// One single-level batch of `q` points; requires `s = 1`.
pub fn step_kriging_batch(
    state: &mut SequentialState,
    criterion: Criterion,
    q: usize,
    cfg: &BatchConfig,
    budget: u64,
) -> Result<StepOutcome> {
    if state.levels() != 1 {
        return Err(Error::Config("kriging batches need a single-level problem".into()));
    }
    let t = state.problem.cost.time(1);
    let q = q.min((budget.saturating_sub(state.spent) / t) as usize);
    if q == 0 {
        return Ok(StepOutcome::Exhausted);
    }
    let model = state.model.base();
    let it = state.iteration() as u64;
    let picks = match criterion {
        Criterion::AdjMmse => {
            let mut cfg = cfg.clone();
            cfg.mh.seed = seeds::derive(seeds::derive(state.opts.seed, seeds::TAG_MCMC), it);
            let diag = loocv_diagnostics(model)?;
            let sel = batch::select_batch_adjmmse(model, &diag, q, &cfg)?;
            sel.points
                .into_iter()
                .zip(sel.scores)
                .map(|(point, value)| Selection {
                    point,
                    value,
                    grid_index: 0,
                })
                .collect()
        }
        Criterion::MinImse => batch::select_batch_liar_minimse(model, q, &state.grid)?.0,
        Criterion::MaxVar => {
            let mut current = model.clone();
            let mut picks = Vec::with_capacity(q);
            for _ in 0..q {
                let s = criteria::select_maxvar(&current, &state.grid)?;
                current = current.liar_condition(&s.point)?;
                picks.push(s);
            }
            picks
        }
        Criterion::KleiCrit => {
            return Err(Error::Config("kleicrit has no batch variant".into()));
        }
    };
    add_single_points(state, picks)?;
    Ok(StepOutcome::Advanced)
}

fn add_single_points(state: &mut SequentialState, picks: Vec<Selection>) -> Result<()> {
    let mut data = state.model.data().clone();
    let mut runs = Vec::with_capacity(picks.len());
    for sel in picks {
        if data.locate(1, &sel.point, SNAP_TOL).is_some() {
            log::warn!("skipping {:?}: within {SNAP_TOL} of a design point", sel.point);
            continue;
        }
        state.simulate(&mut data, &sel.point, 1, 1)?;
        state.new_points += 1;
        state.accurate_points += 1;
        runs.push(PointRun {
            point: state.physical(&sel.point),
            levels: vec![1],
            criterion: sel.value,
        });
    }
    if runs.is_empty() {
        return Err(Error::Argument("every selected point duplicates the design".into()));
    }
    state.refit(data)?;
    state.record(runs)
}

/// One allocation with the points its selection pipeline produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredAllocation {
    /// `(q^1, …, q^s)`.
    pub q: Vec<usize>,
    /// Uncertainty-reduction score of the selected points.
    pub score: f64,
    /// Unit-cube points selected for each level, coarsest first.
    pub points: Vec<Vec<Vec<f64>>>,
    /// Design size of each level in the (liar-updated) model whose variance
    /// drove that level's selection.
    pub selection_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationReport {
    /// Every allocation scored, in enumeration order.
    pub scored: Vec<ScoredAllocation>,
    /// Index of the chosen allocation in `scored`.
    pub chosen: usize,
    /// Whether the greedy fallback replaced exhaustive enumeration.
    pub greedy: bool,
}

impl AllocationReport {
    pub fn best(&self) -> &ScoredAllocation {
        &self.scored[self.chosen]
    }
}

/// Every `q` with `Σ_i q^i · nested_cost(i) = budget`.
pub fn feasible_allocations(cost: &CostModel, budget: u64) -> Vec<Vec<usize>> {
    let s = cost.levels();
    let mut out = Vec::new();
    let mut q = vec![0; s];
    fn rec(cost: &CostModel, level: usize, rem: u64, q: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let c = cost.nested_cost(level);
        if level == 1 {
            if rem.is_multiple_of(c) {
                q[0] = (rem / c) as usize;
                out.push(q.clone());
            }
            return;
        }
        for k in 0..=(rem / c) {
            q[level - 1] = k as usize;
            rec(cost, level - 1, rem - k * c, q, out);
        }
        q[level - 1] = 0;
    }
    rec(cost, s, budget, &mut q, &mut out);
    out
}

/// Runs the batch selection pipeline for allocation `q` without simulating.
///
/// Levels are visited from the top down. Level `l` samples from its current
/// variance, ranks cluster centers by the adjusted score, and its points are
/// then fed to levels `1..l` as liar observations.
pub fn select_allocation(
    model: &CokrigingModel,
    diag: &MfDiagnostics,
    q: &[usize],
    cfg: &BatchConfig,
) -> Result<ScoredAllocation> {
    let s = model.levels();
    kernels::check_dim(s, q.len())?;
    check_diagnostics(model, diag)?;
    let parts = partitions(model.data());
    let d = model.dim();
    let mut current = model.clone();
    let mut points = vec![Vec::new(); s];
    let mut sizes = vec![0; s];
    let mut score = 0.0;
    for l in (1..=s).rev() {
        sizes[l - 1] = current.data().n(l);
        if q[l - 1] > 0 {
            let mut level_cfg = cfg.clone();
            level_cfg.mh.seed = seeds::derive(cfg.mh.seed, l as u64);
            let m = &current;
            let sel = batch_pipeline(
                |x| m.var_unchecked(x, l),
                |x| batch_score(m, diag, &parts, x, l),
                d,
                q[l - 1],
                &level_cfg,
            )?;
            let weight = m.rho_product(l, s) * m.kernel(l).volume();
            score += sel
                .points
                .iter()
                .map(|x| m.bias_unchecked(x, l)[l - 1] * weight)
                .sum::<f64>();
            points[l - 1] = sel.points;
        }
        if l > 1 {
            for x in &points[l - 1] {
                current = current.liar_condition(x, l - 1)?;
            }
        }
    }
    Ok(ScoredAllocation {
        q: q.to_vec(),
        score,
        points,
        selection_sizes: sizes,
    })
}

/// Chooses the allocation of one batch round.
///
/// All feasible allocations are scored when there are at most
/// [`MAX_ALLOCATIONS`]; ties go to the larger `q^1`. Larger sets fall back
/// to a greedy build-up by marginal score per unit cost.
pub fn allocate_budget(
    model: &CokrigingModel,
    diag: &MfDiagnostics,
    cost: &CostModel,
    budget: u64,
    cfg: &BatchConfig,
) -> Result<AllocationReport> {
    kernels::check_dim(model.levels(), cost.levels())?;
    if budget < cost.time(1) {
        return Err(Error::Budget(format!(
            "budget {budget} is below the level-1 cost {}",
            cost.time(1)
        )));
    }
    let feasible = feasible_allocations(cost, budget);
    if feasible.is_empty() {
        return Err(Error::Budget(format!("no allocation spends exactly {budget}")));
    }
    if feasible.len() > MAX_ALLOCATIONS {
        return greedy_allocation(model, diag, cost, budget, cfg);
    }
    let scored = feasible
        .iter()
        .map(|q| select_allocation(model, diag, q, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut chosen = 0;
    for (k, a) in scored.iter().enumerate().skip(1) {
        let best = &scored[chosen];
        if a.score > best.score || (a.score == best.score && a.q[0] > best.q[0]) {
            chosen = k;
        }
    }
    Ok(AllocationReport {
        scored,
        chosen,
        greedy: false,
    })
}

fn greedy_allocation(
    model: &CokrigingModel,
    diag: &MfDiagnostics,
    cost: &CostModel,
    budget: u64,
    cfg: &BatchConfig,
) -> Result<AllocationReport> {
    let s = cost.levels();
    // reachable[r]: some allocation spends exactly r.
    let mut reachable = vec![false; budget as usize + 1];
    reachable[0] = true;
    for r in 1..=budget as usize {
        reachable[r] = (1..=s).any(|l| {
            let c = cost.nested_cost(l) as usize;
            c <= r && reachable[r - c]
        });
    }
    let mut q = vec![0; s];
    let mut rem = budget;
    let mut current = 0.0;
    let mut scored = Vec::new();
    while rem > 0 {
        let mut best: Option<(f64, ScoredAllocation, u64)> = None;
        for l in 1..=s {
            let c = cost.nested_cost(l);
            if c > rem || !reachable[(rem - c) as usize] {
                continue;
            }
            let mut cand = q.clone();
            cand[l - 1] += 1;
            let a = select_allocation(model, diag, &cand, cfg)?;
            let gain = (a.score - current) / c as f64;
            if best.as_ref().is_none_or(|(g, _, _)| gain > *g) {
                best = Some((gain, a, c));
            }
        }
        let (_, a, c) = best.ok_or_else(|| Error::Budget(format!("no allocation spends exactly {budget}")))?;
        q = a.q.clone();
        current = a.score;
        rem -= c;
        scored.push(a);
    }
    let chosen = scored.len() - 1;
    Ok(AllocationReport {
        scored,
        chosen,
        greedy: true,
    })
}

/// One batch round spending exactly `round_budget` (or what is left of the
/// total budget).
pub fn step_batch(
    state: &mut SequentialState,
    round_budget: u64,
    cfg: &BatchConfig,
    total_budget: u64,
) -> Result<Option<AllocationReport>> {
    let remaining = total_budget.saturating_sub(state.spent);
    let round = round_budget.min(remaining);
    if round < state.problem.cost.time(1) {
        return Ok(None);
    }
    let diag = state.model.loocv_diagnostics()?;
    let mut cfg = cfg.clone();
    cfg.mh.seed = seeds::derive(seeds::derive(state.opts.seed, seeds::TAG_MCMC), state.iteration() as u64);
    let cost = state.problem.cost.clone();
    let report = allocate_budget(&state.model, &diag, &cost, round, &cfg)?;
    let best = report.best().clone();
    let s = state.levels();
    let before = state.spent;
    let mut data = state.model.data().clone();
    let mut runs = Vec::new();
    for l in 1..=s {
        for x in &best.points[l - 1] {
            state.simulate(&mut data, x, 1, l)?;
            state.new_points += 1;
            if l == s {
                state.accurate_points += 1;
            }
            runs.push(PointRun {
                point: state.physical(x),
                levels: (1..=l).collect(),
                criterion: batch_score(&state.model, &diag, &partitions(state.model.data()), x, l),
            });
        }
    }
    debug_assert_eq!(state.spent - before, cost.allocation_cost(&best.q));
    state.refit(data)?;
    state.record(runs)?;
    Ok(Some(report))
}

/// Writes the iteration log, one row per simulated point (iteration 0 has
/// an empty point).
pub fn write_log_csv(path: &Path, log: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["iteration", "point", "levels", "criterion", "spent_time", "nrmse"])?;
    let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(";");
    for rec in log {
        let nrmse = rec.nrmse.map(|v| v.to_string()).unwrap_or_default();
        if rec.runs.is_empty() {
            w.write_record([rec.iteration.to_string(), String::new(), String::new(), String::new(), rec.spent.to_string(), nrmse.clone()])?;
        }
        for run in &rec.runs {
            w.write_record([
                rec.iteration.to_string(),
                join(&mut run.point.iter().map(|v| format!("{v:?}"))),
                join(&mut run.levels.iter().map(|l| l.to_string())),
                format!("{:?}", run.criterion),
                rec.spent.to_string(),
                nrmse.clone(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
