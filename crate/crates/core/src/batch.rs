//! q-points-at-a-time selection: Metropolis-Hastings sampling from the
//! kriging variance, N-means clustering of the chain, the cluster-count
//! scan, and the liar baseline.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::criteria::{self, CandidateGrid, ImseQuadrature, Selection, VoronoiPartition};
use crate::error::{Error, Result};
use crate::kernels::sq_dist;
use crate::kriging::KrigingModel;
use crate::loocv::LoocvDiagnostics;
use crate::seeds;

/// Chain samples kept for clustering; longer chains are thinned by stride.
pub const MAX_CLUSTER_SAMPLES: usize = 2000;
/// Largest number of cluster counts tried by the scan.
pub const MAX_SCAN_VALUES: usize = 16;
pub const MAX_LLOYD_ITERS: usize = 100;

const START_CANDIDATES_PER_DIM: usize = 100;
const ADAPT_FACTOR: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    /// Initial per-axis proposal standard deviation in unit-cube units.
    pub proposal_std: f64,
    pub target_acceptance: f64,
    pub adapt_interval: usize,
    pub seed: u64,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            burn_in: 2_000,
            proposal_std: 0.25,
            target_acceptance: 0.3,
            adapt_interval: 200,
            seed: 0,
        }
    }
}

impl MhConfig {
    /// Chain length used for full-size benchmark runs.
    pub fn paper_scale() -> Self {
        Self {
            n_samples: 50_000,
            burn_in: 5_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config(format!(
                "target acceptance {} must lie in (0, 1)",
                self.target_acceptance
            )));
        }
        if self.burn_in >= self.n_samples {
            return Err(Error::Config(format!(
                "burn-in {} must be smaller than the chain length {}",
                self.burn_in, self.n_samples
            )));
        }
        if !(self.proposal_std > 0.0) || self.adapt_interval == 0 {
            return Err(Error::Config("proposal std and adapt interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhChain {
    /// Post-burn-in states (repeats included).
    pub samples: Vec<Vec<f64>>,
    /// Acceptance rate after burn-in, with the proposal frozen.
    pub acceptance_rate: f64,
    pub final_proposal_std: f64,
}

/// Random-walk Metropolis-Hastings on the unit cube with target ∝ `density`.
///
/// Proposals outside the cube are rejected. During burn-in the proposal
/// scale is multiplied or divided by 1.1 after every `adapt_interval`
/// proposals to move the acceptance rate toward the target.
pub fn mh_sample(density: impl Fn(&[f64]) -> f64, d: usize, cfg: &MhConfig) -> Result<MhChain> {
    cfg.validate()?;
    if d == 0 {
        return Err(Error::Argument("sampling needs d ≥ 1".into()));
    }
    let mut rng = seeds::rng(cfg.seed);

    // start at the densest of a seeded batch of uniform points
    let mut x: Vec<f64> = Vec::new();
    let mut fx = 0.0;
    for _ in 0..START_CANDIDATES_PER_DIM * d {
        let c: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
        let fc = density(&c);
        if fc > fx {
            x = c;
            fx = fc;
        }
    }
    if !(fx > 0.0) {
        return Err(Error::StartPoint);
    }

    let mut std = cfg.proposal_std;
    let mut window_accepts = 0;
    let mut window_len = 0;
    let mut accepts_after = 0;
    let mut samples = Vec::with_capacity(cfg.n_samples - cfg.burn_in);
    for it in 0..cfg.n_samples {
        let prop: Vec<f64> = x
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + std * z
            })
            .collect();
        let u: f64 = rng.gen();
        let accepted = if prop.iter().all(|v| (0.0..=1.0).contains(v)) {
            let fp = density(&prop);
            if fp > 0.0 && u * fx < fp {
                x = prop;
                fx = fp;
                true
            } else {
                false
            }
        } else {
            false
        };
        if it < cfg.burn_in {
            window_accepts += usize::from(accepted);
            window_len += 1;
            if window_len == cfg.adapt_interval {
                let rate = window_accepts as f64 / window_len as f64;
                if rate > cfg.target_acceptance {
                    std *= ADAPT_FACTOR;
                } else if rate < cfg.target_acceptance {
                    std /= ADAPT_FACTOR;
                }
                window_accepts = 0;
                window_len = 0;
            }
        } else {
            accepts_after += usize::from(accepted);
            samples.push(x.clone());
        }
    }
    Ok(MhChain {
        acceptance_rate: accepts_after as f64 / samples.len() as f64,
        samples,
        final_proposal_std: std,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub centers: Vec<Vec<f64>>,
    /// Cluster index of every sample.
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after every assignment step.
    pub wcss_trace: Vec<f64>,
    pub iterations: usize,
}

impl ClusterSet {
    pub fn n(&self) -> usize {
        self.centers.len()
    }

    /// Smallest value of `f` over the centers.
    pub fn min_center_value(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.centers.iter().map(|c| f(c)).fold(f64::INFINITY, f64::min)
    }
}

/// Lloyd iterations from a seeded farthest-point initialization, until the
/// assignment no longer changes or 100 iterations.
pub fn nmeans(samples: &[Vec<f64>], n: usize, seed: u64) -> Result<ClusterSet> {
    if n == 0 || n > samples.len() {
        return Err(Error::Argument(format!(
            "cannot form {n} clusters from {} samples",
            samples.len()
        )));
    }
    let d = samples[0].len();
    let mut rng = seeds::rng(seed);

    let mut centers = vec![samples[rng.gen_range(0..samples.len())].clone()];
    let mut nearest: Vec<f64> = samples.iter().map(|s| sq_dist(s, &centers[0])).collect();
    while centers.len() < n {
        let (far, _) = criteria::argmax(nearest.iter().cloned());
        let c = samples[far].clone();
        for (s, best) in samples.iter().zip(nearest.iter_mut()) {
            *best = best.min(sq_dist(s, &c));
        }
        centers.push(c);
    }

    let mut assignment = vec![usize::MAX; samples.len()];
    let mut wcss_trace = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut wcss = 0.0;
        let mut dist = vec![0.0; samples.len()];
        for (i, s) in samples.iter().enumerate() {
            let (k, dk) = nearest_center(&centers, s);
            if assignment[i] != k {
                assignment[i] = k;
                changed = true;
            }
            dist[i] = dk;
            wcss += dk;
        }
        wcss_trace.push(wcss);
        iterations += 1;
        if !changed || iterations >= MAX_LLOYD_ITERS {
            break;
        }
        let mut sums = vec![vec![0.0; d]; n];
        let mut counts = vec![0usize; n];
        for (s, &k) in samples.iter().zip(&assignment) {
            counts[k] += 1;
            for m in 0..d {
                sums[k][m] += s[m];
            }
        }
        for k in 0..n {
            if counts[k] > 0 {
                centers[k] = sums[k].iter().map(|v| v / counts[k] as f64).collect();
            } else {
                // re-seed at the sample worst served by its center
                let (far, _) = criteria::argmax(dist.iter().cloned());
                centers[k] = samples[far].clone();
                dist[far] = 0.0;
            }
        }
    }
    Ok(ClusterSet {
        centers,
        assignment,
        wcss_trace,
        iterations,
    })
}

fn nearest_center(centers: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Evenly spaced subsequence of at most `max` samples.
pub fn thin(samples: &[Vec<f64>], max: usize) -> Vec<Vec<f64>> {
    if samples.len() <= max {
        return samples.to_vec();
    }
    (0..max).map(|k| samples[k * samples.len() / max].clone()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterScan {
    pub chosen: usize,
    /// `(N, min over centers of the variance)` for every N tried.
    pub scores: Vec<(usize, f64)>,
    pub clusters: ClusterSet,
}

/// Cluster counts tried for `q..=n_max`: all of them when there are few,
/// otherwise an even spread that keeps both ends.
pub fn scan_values(q: usize, n_max: usize) -> Vec<usize> {
    let span = n_max - q;
    if span < MAX_SCAN_VALUES {
        return (q..=n_max).collect();
    }
    let mut v: Vec<usize> = (0..MAX_SCAN_VALUES)
        .map(|k| q + (k * span + (MAX_SCAN_VALUES - 1) / 2) / (MAX_SCAN_VALUES - 1))
        .collect();
    v.dedup();
    v
}

/// Picks N in `[q, n_max]` maximizing the smallest variance at a cluster
/// center; ties go to the smallest N. Clustering for each N is seeded from
/// `(seed, N)`.
pub fn choose_cluster_count(
    variance: impl Fn(&[f64]) -> f64,
    samples: &[Vec<f64>],
    q: usize,
    n_max: usize,
    seed: u64,
) -> Result<ClusterScan> {
    if q == 0 || n_max < q {
        return Err(Error::Config(format!("need 1 ≤ q ≤ N_max (q = {q}, N_max = {n_max})")));
    }
    let distinct = count_distinct(samples, n_max);
    if distinct < q {
        return Err(Error::Config(format!(
            "chain visited only {distinct} distinct points, fewer than q = {q}"
        )));
    }
    let n_max = n_max.min(distinct);
    let mut best: Option<(usize, f64, ClusterSet)> = None;
    let mut scores = Vec::new();
    for n in scan_values(q, n_max) {
        let clusters = nmeans(samples, n, seeds::derive(seed, n as u64))?;
        let score = clusters.min_center_value(&variance);
        scores.push((n, score));
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((n, score, clusters));
        }
    }
    let (chosen, _, clusters) = best.expect("scan is never empty");
    Ok(ClusterScan {
        chosen,
        scores,
        clusters,
    })
}

/// Number of distinct samples, counted up to `cap`.
fn count_distinct(samples: &[Vec<f64>], cap: usize) -> usize {
    let mut seen: Vec<&Vec<f64>> = Vec::new();
    for s in samples {
        if !seen.contains(&s) {
            seen.push(s);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct BatchConfig {
    pub mh: MhConfig,
    /// Upper end of the cluster-count scan; `3q` when absent.
    pub n_max: Option<usize>,
}


#[derive(Debug, Clone, PartialEq)]
pub struct BatchSelection {
    pub points: Vec<Vec<f64>>,
    /// Ranking score of each returned point.
    pub scores: Vec<f64>,
    pub scan: ClusterScan,
    pub acceptance_rate: f64,
}

/// Shared pipeline: sample ∝ `density`, scan cluster counts, rank centers
/// by `score` (descending, lowest index on ties) and keep the top `q`.
pub(crate) fn batch_pipeline(
    density: impl Fn(&[f64]) -> f64,
    score: impl Fn(&[f64]) -> f64,
    d: usize,
    q: usize,
    cfg: &BatchConfig,
) -> Result<BatchSelection> {
    if q == 0 {
        return Err(Error::Config("batch size q must be at least 1".into()));
    }
    let chain = mh_sample(&density, d, &cfg.mh)?;
    let samples = thin(&chain.samples, MAX_CLUSTER_SAMPLES);
    let n_max = cfg.n_max.unwrap_or(3 * q);
    let scan = choose_cluster_count(
        &density,
        &samples,
        q,
        n_max,
        seeds::derive(cfg.mh.seed, seeds::TAG_CLUSTER),
    )?;
    if scan.chosen < q {
        return Err(Error::Config(format!("only {} clusters for q = {q}", scan.chosen)));
    }
    let centers = &scan.clusters.centers;
    let values: Vec<f64> = centers.iter().map(|c| score(c)).collect();
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut scores = Vec::with_capacity(q);
    for k in order {
        if points.iter().any(|p| sq_dist(p, &centers[k]) <= 1e-12) {
            continue;
        }
        points.push(centers[k].clone());
        scores.push(values[k]);
        if points.len() == q {
            break;
        }
    }
    if points.len() < q {
        return Err(Error::Config(format!(
            "only {} distinct cluster centers for q = {q}",
            points.len()
        )));
    }
    Ok(BatchSelection {
        points,
        scores,
        scan,
        acceptance_rate: chain.acceptance_rate,
    })
}

/// Top-q cluster centers of a chain sampled ∝ `k_n(x,x)`, ranked by the
/// LOO-adjusted variance.
pub fn select_batch_adjmmse(
    model: &KrigingModel,
    diag: &LoocvDiagnostics,
    q: usize,
    cfg: &BatchConfig,
) -> Result<BatchSelection> {
    let partition = VoronoiPartition::from_model(model);
    if diag.len() != partition.len() {
        return Err(Error::Dimension {
            expected: partition.len(),
            got: diag.len(),
        });
    }
    batch_pipeline(
        |x| model.var_unchecked(x),
        |x| model.var_unchecked(x) * (1.0 + diag.ratios[partition.index(x)]),
        model.dim(),
        q,
        cfg,
    )
}

/// q successive IMSE-reduction picks, each followed by a liar update.
pub fn select_batch_liar_minimse(
    model: &KrigingModel,
    q: usize,
    grid: &CandidateGrid,
) -> Result<(Vec<Selection>, KrigingModel)> {
    let mut current = model.clone();
    let mut picks = Vec::with_capacity(q);
    for _ in 0..q {
        let quad = ImseQuadrature::new(&current, grid.points())?;
        let s = criteria::select_min_imse_with(&quad, grid);
        drop(quad);
        current = current.liar_condition(&s.point)?;
        picks.push(s);
    }
    Ok((picks, current))
}
