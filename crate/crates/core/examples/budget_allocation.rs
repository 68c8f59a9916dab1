//! Batch co-kriging: score every split of a time budget between coarse and
//! accurate runs and run the best one.

use seqdesign::batch::{BatchConfig, MhConfig};
use seqdesign::cokriging::{CokrigingOptions, MultiFidelityData};
use seqdesign::criteria::CandidateGrid;
use seqdesign::harness::initial_designs;
use seqdesign::kernels::design_matrix;
use seqdesign::mf_sequential::{step_batch, SequentialState};
use seqdesign::mle::MleConfig;
use seqdesign::problems::problem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = problem("tank-r2")?;
    let sets = initial_designs(&[20, 10], p.dim(), 12)?;
    let mut outputs = Vec::new();
    for (l, s) in sets.iter().enumerate() {
        outputs.push(s.iter().map(|u| p.eval_unit(l + 1, u)).collect::<Result<Vec<_>, _>>()?);
    }
    let designs = sets.iter().map(|s| design_matrix(s)).collect::<Result<Vec<_>, _>>()?;
    let data = MultiFidelityData::new(designs, outputs)?;
    let opts = CokrigingOptions {
        mle: MleConfig { starts: 3, ..MleConfig::default() },
        seed: 12,
        ..CokrigingOptions::default()
    };
    let cfg = BatchConfig {
        mh: MhConfig { n_samples: 5000, burn_in: 1000, ..MhConfig::default() },
        ..BatchConfig::default()
    };
    let grid = CandidateGrid::standard(p.dim(), 12)?;
    let test = p.test_set()?;
    let mut state = SequentialState::new(p, data, opts, grid, Some(test))?;
    for round in 1..=2 {
        let report = step_batch(&mut state, 120, &cfg, 240)?.expect("budget left");
        println!("round {round}:");
        for a in &report.scored {
            let mark = if a.q == report.best().q { "  <- chosen" } else { "" };
            println!("  q = {:?}  score {:.4e}{mark}", a.q, a.score);
        }
        let rec = state.log().last().expect("logged");
        println!("  spent {} NRMSE {:.4}", rec.spent, rec.nrmse.unwrap_or(f64::NAN));
    }
    Ok(())
}
