//! Initial designs: maximin Latin hypercubes and nested coarse/fine pairs.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::sq_dist;
use crate::loocv::csv_io;
use crate::seeds;

/// Swap proposals used when no explicit count is given.
pub const DEFAULT_LHS_ITERS: usize = 2000;

const PHI_P: i32 = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct LhsDesign {
    /// n points in the unit cube, one per stratum of width 1/n on every axis.
    pub points: Vec<Vec<f64>>,
    /// Minimum pairwise Euclidean distance.
    pub score: f64,
    /// Score of the random starting hypercube.
    pub initial_score: f64,
    pub seed: u64,
}

/// Random Latin hypercube improved by within-column swaps.
///
/// A swap is kept when the minimum distance grows, or stays equal while the
/// φ_p space-filling measure improves; the minimum distance never decreases.
pub fn lhs_maximin(n: usize, d: usize, iters: usize, seed: u64) -> Result<LhsDesign> {
    if n < 2 {
        return Err(Error::Argument(format!("a maximin design needs n ≥ 2 (got {n})")));
    }
    if d == 0 {
        return Err(Error::Argument("a design needs at least one dimension".into()));
    }
    let mut rng = seeds::rng(seed);
    let mut points = random_lhs(n, d, &mut rng);
    let (mut best_min, mut best_phi) = space_filling(&points);
    let initial_score = best_min;
    for _ in 0..iters {
        let col = rng.gen_range(0..d);
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        swap_coord(&mut points, a, b, col);
        let (min, phi) = space_filling(&points);
        if min > best_min || (min == best_min && phi < best_phi) {
            best_min = min;
            best_phi = phi;
        } else {
            swap_coord(&mut points, a, b, col);
        }
    }
    Ok(LhsDesign {
        points,
        score: best_min,
        initial_score,
        seed,
    })
}

fn swap_coord(points: &mut [Vec<f64>], a: usize, b: usize, col: usize) {
    let t = points[a][col];
    points[a][col] = points[b][col];
    points[b][col] = t;
}

/// Latin hypercube with a uniform jitter inside each stratum.
pub fn random_lhs<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for m in 0..d {
        perm.shuffle(rng);
        for i in 0..n {
            points[i][m] = (perm[i] as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    points
}

/// Minimum pairwise distance.
pub fn min_distance(points: &[Vec<f64>]) -> f64 {
    space_filling(points).0
}

fn space_filling(points: &[Vec<f64>]) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut phi = 0.0;
    for i in 0..points.len() {
        for j in 0..i {
            let dist = sq_dist(&points[i], &points[j]).sqrt();
            min = min.min(dist);
            phi += dist.max(1e-300).powi(-PHI_P);
        }
    }
    (min, phi)
}

/// True when every axis has exactly one point per stratum of width 1/n.
pub fn is_latin(points: &[Vec<f64>]) -> bool {
    let n = points.len();
    if n == 0 {
        return false;
    }
    let d = points[0].len();
    (0..d).all(|m| {
        let mut seen = vec![false; n];
        points.iter().all(|p| {
            let s = ((p[m] * n as f64).floor() as usize).min(n - 1);
            !std::mem::replace(&mut seen[s], true)
        })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestedDesign {
    /// Fine points first (in their original order), then the kept candidates.
    pub coarse: Vec<Vec<f64>>,
    /// Greedy matches `(fine index, removed candidate index)` in removal order.
    pub matches: Vec<(usize, usize)>,
    /// Candidate design the coarse points were drawn from.
    pub candidates: Vec<Vec<f64>>,
}

/// Coarse design of size `n_c` containing `fine`.
///
/// A maximin candidate design of size `n_c` is generated; the `n_f`
/// candidates closest to the fine points are removed by greedy one-to-one
/// matching (globally closest pair first, lowest candidate index on ties) and
/// the rest is appended to the fine design.
pub fn nested_pair(fine: &[Vec<f64>], n_c: usize, seed: u64) -> Result<NestedDesign> {
    nested_pair_with_iters(fine, n_c, seed, DEFAULT_LHS_ITERS)
}

pub fn nested_pair_with_iters(
    fine: &[Vec<f64>],
    n_c: usize,
    seed: u64,
    iters: usize,
) -> Result<NestedDesign> {
    let n_f = fine.len();
    if n_f == 0 {
        return Err(Error::Argument("fine design is empty".into()));
    }
    if n_c < n_f {
        return Err(Error::Argument(format!(
            "coarse size {n_c} is smaller than the fine design ({n_f})"
        )));
    }
    let d = fine[0].len();
    if fine.iter().any(|p| p.len() != d) {
        return Err(Error::Argument("fine points have inconsistent dimensions".into()));
    }
    let candidates = if n_c >= 2 {
        lhs_maximin(n_c, d, iters, seed)?.points
    } else {
        vec![(0..d).map(|_| 0.5).collect()]
    };
    let mut fine_free = vec![true; n_f];
    let mut cand_free = vec![true; n_c];
    let mut matches = Vec::with_capacity(n_f);
    for _ in 0..n_f {
        let mut best: Option<(f64, usize, usize)> = None;
        for c in (0..n_c).filter(|&c| cand_free[c]) {
            for f in (0..n_f).filter(|&f| fine_free[f]) {
                let dist = sq_dist(&fine[f], &candidates[c]);
                if best.is_none_or(|(bd, _, _)| dist < bd) {
                    best = Some((dist, f, c));
                }
            }
        }
        let (_, f, c) = best.expect("free candidates remain");
        fine_free[f] = false;
        cand_free[c] = false;
        matches.push((f, c));
    }
    let mut coarse = fine.to_vec();
    coarse.extend((0..n_c).filter(|&c| cand_free[c]).map(|c| candidates[c].clone()));
    Ok(NestedDesign {
        coarse,
        matches,
        candidates,
    })
}

/// Writes unit-cube coordinates as CSV with header `x1,…,xd`.
pub fn write_design_csv(path: &Path, points: &[Vec<f64>]) -> Result<()> {
    let d = points.first().map_or(0, |p| p.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record((1..=d).map(|m| format!("x{m}")))?;
    for p in points {
        w.write_record(p.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_design_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let d = r.headers()?.len();
    let mut points = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let p = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Argument(format!("{}: bad coordinate `{s}`: {e}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        if p.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: p.len(),
            });
        }
        if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("coordinate {v} outside the unit cube")));
        }
        points.push(p);
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_points_one_dim() {
        let lhs = lhs_maximin(2, 1, 10, 3).unwrap();
        let mut halves: Vec<bool> = lhs.points.iter().map(|p| p[0] < 0.5).collect();
        halves.sort();
        assert_eq!(halves, vec![false, true]);
    }

    #[test]
    fn rejects_tiny_designs() {
        assert!(lhs_maximin(1, 2, 10, 0).is_err());
    }

    #[test]
    fn optimization_never_hurts() {
        for seed in 0..5 {
            let lhs = lhs_maximin(12, 3, 500, seed).unwrap();
            assert!(lhs.score >= lhs.initial_score);
            assert!(is_latin(&lhs.points));
        }
    }

    #[test]
    fn ten_point_floor() {
        let lhs = lhs_maximin(10, 2, 1000, 2024).unwrap();
        assert!(lhs.score >= 0.18, "score {}", lhs.score);
    }

    #[test]
    fn nested_sizes() {
        let fine = lhs_maximin(10, 2, 500, 1).unwrap().points;
        let nested = nested_pair(&fine, 20, 2).unwrap();
        assert_eq!(nested.coarse.len(), 20);
        assert_eq!(&nested.coarse[..10], &fine[..]);

        let same = nested_pair(&fine, 10, 3).unwrap();
        assert_eq!(same.coarse, fine);
        assert!(nested_pair(&fine, 9, 3).is_err());
    }

    #[test]
    fn greedy_matching_audit() {
        let fine = lhs_maximin(6, 2, 300, 4).unwrap().points;
        let nested = nested_pair(&fine, 15, 5).unwrap();
        let mut cand_free = [true; 15];
        let mut fine_free = [true; 6];
        for &(f, c) in &nested.matches {
            // the removed candidate is the closest free pair overall
            let dist = sq_dist(&fine[f], &nested.candidates[c]);
            for cc in (0..15).filter(|&cc| cand_free[cc]) {
                for ff in (0..6).filter(|&ff| fine_free[ff]) {
                    assert!(sq_dist(&fine[ff], &nested.candidates[cc]) >= dist);
                }
            }
            cand_free[c] = false;
            fine_free[f] = false;
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let pts = lhs_maximin(5, 3, 50, 9).unwrap().points;
        write_design_csv(&path, &pts).unwrap();
        assert_eq!(read_design_csv(&path).unwrap(), pts);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn always_latin_and_nested(n in 2usize..15, d in 1usize..5, extra in 0usize..10, seed in any::<u64>()) {
            let lhs = lhs_maximin(n, d, 100, seed).unwrap();
            prop_assert!(is_latin(&lhs.points));
            let nested = nested_pair_with_iters(&lhs.points, n + extra, seed ^ 1, 50).unwrap();
            prop_assert_eq!(nested.coarse.len(), n + extra);
            for p in &lhs.points {
                prop_assert!(nested.coarse.iter().any(|c| c == p));
            }
        }
    }
}
