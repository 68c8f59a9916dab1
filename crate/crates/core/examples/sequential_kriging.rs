//! One-point-at-a-time sequential kriging on Ackley with each single-level
//! criterion, starting from the same initial design.

use seqdesign::cokriging::{CokrigingOptions, MultiFidelityData};
use seqdesign::criteria::{CandidateGrid, Criterion};
use seqdesign::design::lhs_maximin;
use seqdesign::kernels::design_matrix;
use seqdesign::mf_sequential::{step_kriging, SequentialState};
use seqdesign::mle::MleConfig;
use seqdesign::problems::problem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = problem("ackley")?;
    let test = p.test_set()?;
    let pts = lhs_maximin(10, 2, 2000, 3)?.points;
    let y: Vec<f64> = pts.iter().map(|u| p.eval_unit(1, u)).collect::<Result<_, _>>()?;
    let opts = CokrigingOptions {
        mle: MleConfig { starts: 3, ..MleConfig::default() },
        seed: 3,
        ..CokrigingOptions::default()
    };
    for criterion in Criterion::ALL {
        let data = MultiFidelityData::single(design_matrix(&pts)?, y.clone())?;
        let grid = CandidateGrid::standard(2, 3)?;
        let mut state = SequentialState::new(p.clone(), data, opts.clone(), grid, Some(test.clone()))?;
        for _ in 0..15 {
            step_kriging(&mut state, criterion, u64::MAX)?;
        }
        let curve: Vec<String> = state
            .log()
            .iter()
            .step_by(5)
            .map(|r| format!("{:.3}", r.nrmse.unwrap_or(f64::NAN)))
            .collect();
        println!("{criterion:<9} NRMSE every 5 points: {}", curve.join(" "));
    }
    Ok(())
}
