//! Benchmark functions, the analytic tank codes and the NRMSE metric.

use std::f64::consts::{E, PI};
use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::Domain;
use crate::mf_sequential::CostModel;
use crate::seeds;

pub const TEST_SET_SIZE: usize = 1000;
pub const CALIBRATION_SIZE: usize = 10_000;
pub const CALIBRATION_TOL: f64 = 0.02;

/// Physical-coordinate simulator for one code level.
pub type Simulator = Arc<dyn Fn(&[f64]) -> Result<f64> + Send + Sync>;

pub fn ackley(x: f64, y: f64) -> f64 {
    -20.0 * (-0.2 * ((x * x + y * y) / 2.0).sqrt()).exp()
        - (((2.0 * PI * x).cos() + (2.0 * PI * y).cos()) / 2.0).exp()
        + 20.0
        + E
}

fn shubert_factor(x: f64) -> f64 {
    (1..=5)
        .map(|k| {
            let k = k as f64;
            k * ((k + 1.0) * x + k).cos()
        })
        .sum()
}

pub fn shubert(x: f64, y: f64) -> f64 {
    shubert_factor(x) * shubert_factor(y)
}

pub fn michalewicz(x: f64, y: f64) -> f64 {
    -x.sin() * (x * x / PI).sin().powi(20) - y.sin() * (y * y / PI).sin().powi(20)
}

/// Names of the eight tank inputs, in order.
pub const TANK_PARAMETERS: [&str; 8] = [
    "P", "R_int", "T_shell", "T_cap", "E_shell", "E_cap", "sigma_y_shell", "sigma_y_cap",
];

pub fn tank_domain() -> Domain {
    Domain::new(
        vec![30.0, 1500.0, 300.0, 100.0, 63.0, 189.0, 200.0, 400.0],
        vec![50.0, 2500.0, 500.0, 300.0, 77.0, 231.0, 300.0, 800.0],
    )
    .expect("tank bounds are ordered")
}

/// Von Mises stress (MPa) of a perfect spherical shell under pressure.
/// Depends on P, R_int and T_shell only.
pub fn tank_coarse(x: &[f64]) -> Result<f64> {
    tank_domain().check(x)?;
    Ok(tank_coarse_unchecked(x))
}

fn tank_coarse_unchecked(x: &[f64]) -> f64 {
    let (p, r, t) = (x[0], x[1], x[2]);
    let outer = (r + t).powi(3);
    1.5 * outer / (outer - r.powi(3)) * p
}

/// One smooth cosine feature on unit-cube coordinates.
#[derive(Debug, Clone, PartialEq)]
struct Feature {
    weight: f64,
    freq: [f64; 8],
    phase: f64,
}

const FEATURES: usize = 8;

/// Accurate-level stand-in: `tank_coarse(x) + b·g(x)` where `g` is a fixed
/// sum of cosine features of (P, R_int, T_shell, T_cap), centred and made
/// uncorrelated with the coarse code on a calibration sample so that `b`
/// sets the coarse/accurate correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTank {
    features: Vec<Feature>,
    g_mean: f64,
    /// Coefficient of the centred coarse code removed from the raw features.
    g_coarse: f64,
    coarse_mean: f64,
    b: f64,
    pub corr_target: f64,
    /// Correlation with the coarse code on the calibration sample.
    pub measured_corr: f64,
    pub seed: u64,
}

impl SyntheticTank {
    pub fn new(response_id: u8, corr_target: f64, seed: u64) -> Result<Self> {
        if !(corr_target > 0.0 && corr_target < 1.0) {
            return Err(Error::Calibration(format!(
                "correlation target {corr_target} must lie in (0, 1)"
            )));
        }
        let mut tank = Self::uncalibrated(response_id, seed);
        tank.corr_target = corr_target;
        let sample = uniform_sample(&tank_domain(), CALIBRATION_SIZE, seeds::derive(seed, 0xCA1));
        let coarse: Vec<f64> = sample.iter().map(|x| tank_coarse_unchecked(x)).collect();
        let raw: Vec<f64> = sample.iter().map(|x| tank.raw_feature(x)).collect();
        let (cm, cv) = mean_var(&coarse);
        let (gm, _) = mean_var(&raw);
        let cov = coarse
            .iter()
            .zip(&raw)
            .map(|(c, g)| (c - cm) * (g - gm))
            .sum::<f64>()
            / coarse.len() as f64;
        tank.coarse_mean = cm;
        tank.g_mean = gm;
        tank.g_coarse = cov / cv;
        let g: Vec<f64> = sample.iter().map(|x| tank.g(x)).collect();
        let (_, gv) = mean_var(&g);
        if !(gv > 0.0) {
            return Err(Error::Calibration("perturbation has zero variance".into()));
        }
        tank.b = (cv / gv * (1.0 / (corr_target * corr_target) - 1.0)).sqrt();
        let fine: Vec<f64> = sample.iter().map(|x| tank.eval_unchecked(x)).collect();
        tank.measured_corr = correlation(&coarse, &fine);
        if (tank.measured_corr - corr_target).abs() > CALIBRATION_TOL {
            return Err(Error::Calibration(format!(
                "measured correlation {} misses target {corr_target}",
                tank.measured_corr
            )));
        }
        Ok(tank)
    }

    /// Preset targets 0.99, 0.80 and 0.45 for responses 1, 2 and 3.
    pub fn preset(response_id: u8) -> Result<Self> {
        let target = match response_id {
            1 => 0.99,
            2 => 0.80,
            3 => 0.45,
            _ => return Err(Error::Config(format!("no tank response {response_id}"))),
        };
        Self::new(response_id, target, PRESET_SEED)
    }

    /// The `b = 0` edge: equal to the coarse code.
    pub fn coarse_copy(response_id: u8, seed: u64) -> Self {
        let mut t = Self::uncalibrated(response_id, seed);
        t.corr_target = 1.0;
        t.measured_corr = 1.0;
        t
    }

    fn uncalibrated(response_id: u8, seed: u64) -> Self {
        let mut rng = seeds::rng(seeds::derive(seed, response_id as u64));
        let features = (0..FEATURES)
            .map(|k| {
                let mut freq = [0.0; 8];
                for f in freq.iter_mut().take(3) {
                    *f = rng.gen_range(-0.7..0.7);
                }
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                freq[3] = sign * rng.gen_range(0.5..1.5);
                Feature {
                    weight: rng.gen_range(0.5..1.0) / (1.0 + k as f64),
                    freq,
                    phase: rng.gen_range(0.0..2.0 * PI),
                }
            })
            .collect();
        Self {
            features,
            g_mean: 0.0,
            g_coarse: 0.0,
            coarse_mean: 0.0,
            b: 0.0,
            corr_target: 1.0,
            measured_corr: 1.0,
            seed,
        }
    }

    fn raw_feature(&self, x: &[f64]) -> f64 {
        let u = tank_domain().to_unit(x).expect("checked by caller");
        self.features
            .iter()
            .map(|f| {
                let arg: f64 = f.freq.iter().zip(&u).map(|(w, v)| w * v).sum();
                f.weight * (2.0 * PI * arg + f.phase).cos()
            })
            .sum()
    }

    fn g(&self, x: &[f64]) -> f64 {
        self.raw_feature(x) - self.g_mean - self.g_coarse * (tank_coarse_unchecked(x) - self.coarse_mean)
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        tank_domain().check(x)?;
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let c = tank_coarse_unchecked(x);
        if self.b == 0.0 {
            c
        } else {
            c + self.b * self.g(x)
        }
    }
}

const PRESET_SEED: u64 = 0x7A4C_2011;

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n)
}

/// Pearson correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    cov / (va * vb).sqrt()
}

/// Seeded uniform points in physical coordinates.
pub fn uniform_sample(domain: &Domain, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeds::rng(seed);
    (0..n)
        .map(|_| {
            let u: Vec<f64> = (0..domain.dim()).map(|_| rng.gen()).collect();
            domain.from_unit(&u)
        })
        .collect()
}

/// RMSE over the test set divided by the range of the truth.
pub fn normalized_rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let max = truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = truth.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > min) {
        return Err(Error::ZeroRange);
    }
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / truth.len() as f64;
    Ok(mse.sqrt() / (max - min))
}

/// Function form: evaluates both sides on `test_set`.
pub fn normalized_rmse_fn(
    pred: impl Fn(&[f64]) -> f64,
    truth: impl Fn(&[f64]) -> f64,
    test_set: &[Vec<f64>],
) -> Result<f64> {
    let p: Vec<f64> = test_set.iter().map(|x| pred(x)).collect();
    let t: Vec<f64> = test_set.iter().map(|x| truth(x)).collect();
    normalized_rmse(&p, &t)
}

/// Fixed evaluation points with the accurate-level truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub unit: Vec<Vec<f64>>,
    pub truth: Vec<f64>,
}

#[derive(Clone)]
pub struct BenchmarkProblem {
    pub name: &'static str,
    pub description: &'static str,
    pub domain: Domain,
    /// Level 1 is the coarsest code.
    pub levels: Vec<Simulator>,
    pub cost: CostModel,
    pub test_size: usize,
    pub test_seed: u64,
}

impl fmt::Debug for BenchmarkProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BenchmarkProblem")
            .field("name", &self.name)
            .field("levels", &self.levels.len())
            .field("cost", &self.cost)
            .finish()
    }
}

impl BenchmarkProblem {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Runs the 1-based `level` at a unit-cube point.
    pub fn eval_unit(&self, level: usize, u: &[f64]) -> Result<f64> {
        let x = self.domain.from_unit(u);
        let sim = self.levels.get(level.wrapping_sub(1)).ok_or_else(|| Error::Simulator {
            level,
            point: x.clone(),
            reason: "no such level".into(),
        })?;
        match sim(&x) {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(v) => Err(Error::Simulator {
                level,
                point: x,
                reason: format!("non-finite output {v}"),
            }),
            Err(e) => Err(Error::Simulator {
                level,
                point: x,
                reason: e.to_string(),
            }),
        }
    }

    /// Single-level copy keeping only the accurate code and its cost.
    pub fn top_level_only(&self) -> Self {
        let top = self.n_levels();
        Self {
            levels: vec![self.levels[top - 1].clone()],
            cost: CostModel::new(vec![self.cost.time(top)]).expect("positive cost"),
            ..self.clone()
        }
    }

    pub fn test_set(&self) -> Result<TestSet> {
        let mut rng = seeds::rng(self.test_seed);
        let unit: Vec<Vec<f64>> = (0..self.test_size)
            .map(|_| (0..self.dim()).map(|_| rng.gen()).collect())
            .collect();
        let top = self.n_levels();
        let truth = unit.iter().map(|u| self.eval_unit(top, u)).collect::<Result<Vec<_>>>()?;
        Ok(TestSet { unit, truth })
    }
}

pub const PROBLEM_NAMES: [&str; 6] = ["ackley", "shubert", "michalewicz", "tank-r1", "tank-r2", "tank-r3"];

fn toy(
    name: &'static str,
    description: &'static str,
    lo: f64,
    hi: f64,
    f: fn(f64, f64) -> f64,
    test_seed: u64,
) -> BenchmarkProblem {
    let domain = Domain::new(vec![lo, lo], vec![hi, hi]).expect("ordered bounds");
    let check = domain.clone();
    let sim: Simulator = Arc::new(move |x: &[f64]| {
        check.check(x)?;
        Ok(f(x[0], x[1]))
    });
    BenchmarkProblem {
        name,
        description,
        domain,
        levels: vec![sim],
        cost: CostModel::new(vec![1]).expect("positive"),
        test_size: TEST_SET_SIZE,
        test_seed,
    }
}

pub fn problem(name: &str) -> Result<BenchmarkProblem> {
    Ok(match name {
        "ackley" => toy("ackley", "Ackley function on [-2,2]^2", -2.0, 2.0, ackley, 0xAC),
        "shubert" => toy("shubert", "Shubert function on [-2,2]^2", -2.0, 2.0, shubert, 0x5B),
        "michalewicz" => toy("michalewicz", "Michalewicz function on [0,pi]^2", 0.0, PI, michalewicz, 0x3C),
        "tank-r1" | "tank-r2" | "tank-r3" => {
            let id = name.as_bytes()[6] - b'0';
            let fine = Arc::new(SyntheticTank::preset(id)?);
            let coarse: Simulator = Arc::new(tank_coarse);
            let accurate: Simulator = Arc::new(move |x: &[f64]| fine.eval(x));
            BenchmarkProblem {
                name: PROBLEM_NAMES[2 + id as usize],
                description: match id {
                    1 => "tank, accurate/coarse correlation 0.99",
                    2 => "tank, accurate/coarse correlation 0.80",
                    _ => "tank, accurate/coarse correlation 0.45",
                },
                domain: tank_domain(),
                levels: vec![coarse, accurate],
                cost: CostModel::new(vec![1, 10]).expect("increasing"),
                test_size: TEST_SET_SIZE,
                test_seed: 0x7A00 + id as u64,
            }
        }
        other => return Err(Error::Config(format!("unknown problem `{other}`"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_values() {
        assert!(ackley(0.0, 0.0).abs() < 1e-14);
        assert!((shubert(0.0, 0.0) - 19.875_836_249_802_127).abs() < 1e-12);
        let y: f64 = 1.3;
        let expect = -y.sin() * (y * y / PI).sin().powi(20);
        assert_eq!(michalewicz(0.0, y), expect);
    }

    #[test]
    fn tank_coarse_values() {
        let mut x = vec![30.0, 1500.0, 300.0, 200.0, 70.0, 200.0, 250.0, 600.0];
        let v = tank_coarse(&x).unwrap();
        assert!((v - 106.813_186_813_186_8).abs() < 1e-9);
        x[0] = 60.0;
        assert!(tank_coarse(&x).is_err());
        x[0] = 40.0;
        let doubled = tank_coarse(&x).unwrap();
        x[0] = 20.0;
        assert!(tank_coarse(&x).is_err());
        x[0] = 40.0;
        for (m, v) in [(3, 120.0), (4, 64.0), (5, 230.0), (6, 201.0), (7, 799.0)] {
            let mut z = x.clone();
            z[m] = v;
            assert_eq!(tank_coarse(&z).unwrap(), doubled);
        }
    }

    #[test]
    fn tank_linear_in_pressure() {
        let a = [30.0, 2000.0, 400.0, 200.0, 70.0, 200.0, 250.0, 600.0];
        let mut b = a;
        b[0] = 45.0;
        assert!((tank_coarse(&b).unwrap() - 1.5 * tank_coarse(&a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn presets_calibrate_and_are_stable() {
        for (id, target) in [(1u8, 0.99), (2, 0.80), (3, 0.45)] {
            let t = SyntheticTank::preset(id).unwrap();
            assert!((t.measured_corr - target).abs() <= CALIBRATION_TOL);
            let sample = uniform_sample(&tank_domain(), CALIBRATION_SIZE, 987 + id as u64);
            let c: Vec<f64> = sample.iter().map(|x| tank_coarse(x).unwrap()).collect();
            let f: Vec<f64> = sample.iter().map(|x| t.eval(x).unwrap()).collect();
            let r = correlation(&c, &f);
            assert!((r - target).abs() <= CALIBRATION_TOL, "response {id}: {r}");
        }
        let r1 = SyntheticTank::preset(1).unwrap();
        assert!((0.97..=1.0).contains(&r1.measured_corr));
    }

    #[test]
    fn synthetic_edges() {
        let t = SyntheticTank::coarse_copy(1, 5);
        let x = [40.0, 2000.0, 400.0, 200.0, 70.0, 200.0, 250.0, 600.0];
        assert_eq!(t.eval(&x).unwrap(), tank_coarse(&x).unwrap());
        let a = SyntheticTank::preset(2).unwrap();
        assert_eq!(a.eval(&x).unwrap(), SyntheticTank::preset(2).unwrap().eval(&x).unwrap());
        assert!(SyntheticTank::new(1, 1.0, 5).is_err());
        assert!(SyntheticTank::preset(4).is_err());
    }

    #[test]
    fn nrmse_cases() {
        let truth = vec![0.0, 1.0, 3.0, 2.0];
        assert_eq!(normalized_rmse(&truth, &truth).unwrap(), 0.0);
        let shifted: Vec<f64> = truth.iter().map(|t| t + 0.3).collect();
        assert!((normalized_rmse(&shifted, &truth).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(normalized_rmse(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::ZeroRange)));

        let pred = [0.5, 0.7, 2.0, 2.5];
        let direct = ((0.25 + 0.09 + 1.0 + 0.25) / 4.0f64).sqrt() / 3.0;
        assert!((normalized_rmse(&pred, &truth).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn registry() {
        for name in PROBLEM_NAMES {
            let p = problem(name).unwrap();
            assert_eq!(p.name, name);
            assert_eq!(p.cost.levels(), p.n_levels());
            let t = p.test_set().unwrap();
            assert_eq!(t.unit.len(), 1000);
            assert_eq!(t, p.test_set().unwrap());
        }
        assert!(problem("rosenbrock").is_err());
        let tank = problem("tank-r1").unwrap();
        assert!(matches!(tank.eval_unit(3, &[0.5; 8]), Err(Error::Simulator { level: 3, .. })));
    }

    #[test]
    fn toy_matches_scalar_formulas() {
        let p = problem("ackley").unwrap();
        let mut rng = seeds::rng(3);
        for _ in 0..100 {
            let u = [rng.gen::<f64>(), rng.gen::<f64>()];
            let x = p.domain.from_unit(&u);
            let direct = -20.0 * (-0.2 * (0.5 * (x[0] * x[0] + x[1] * x[1])).sqrt()).exp()
                - (0.5 * ((2.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).cos())).exp()
                + 20.0
                + 1f64.exp();
            assert!((p.eval_unit(1, &u).unwrap() - direct).abs() < 1e-12);
        }
    }
}
