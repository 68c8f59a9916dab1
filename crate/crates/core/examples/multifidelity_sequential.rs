//! One-point-at-a-time sequential co-kriging: each step picks a point and
//! the code levels worth running there under a time ledger.

use seqdesign::cokriging::{CokrigingOptions, MultiFidelityData};
use seqdesign::criteria::CandidateGrid;
use seqdesign::harness::initial_designs;
use seqdesign::kernels::design_matrix;
use seqdesign::mf_sequential::{step_one_point, Proxy, SequentialState, StepOutcome};
use seqdesign::mle::MleConfig;
use seqdesign::problems::problem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "tank-r3".into());
    let p = problem(&name)?;
    let sets = initial_designs(&[20, 10], p.dim(), 8)?;
    let mut outputs = Vec::new();
    for (l, s) in sets.iter().enumerate() {
        outputs.push(s.iter().map(|u| p.eval_unit(l + 1, u)).collect::<Result<Vec<_>, _>>()?);
    }
    let designs = sets.iter().map(|s| design_matrix(s)).collect::<Result<Vec<_>, _>>()?;
    let data = MultiFidelityData::new(designs, outputs)?;
    let opts = CokrigingOptions {
        mle: MleConfig { starts: 3, ..MleConfig::default() },
        seed: 8,
        ..CokrigingOptions::default()
    };
    let test = p.test_set()?;
    let grid = CandidateGrid::standard(p.dim(), 8)?;
    let mut state = SequentialState::new(p, data, opts, grid, Some(test))?;
    let budget = 50;
    while step_one_point(&mut state, Proxy::Adjusted, budget)? == StepOutcome::Advanced {
        let rec = state.log().last().expect("logged");
        let run = &rec.runs[0];
        println!(
            "step {:>2}: levels {:?} spent {:>3} NRMSE {:.4}",
            rec.iteration,
            run.levels,
            rec.spent,
            rec.nrmse.unwrap_or(f64::NAN)
        );
    }
    let last = state.log().last().expect("logged");
    println!(
        "{name}: {} points added, accurate fraction {:.2}",
        last.new_points,
        last.accurate_fraction(2)
    );
    Ok(())
}
