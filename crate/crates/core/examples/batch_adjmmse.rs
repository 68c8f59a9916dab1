//! q-points-at-a-time selection: sample the kriging variance with
//! Metropolis-Hastings, cluster the chain and keep the best cluster centers.

use seqdesign::batch::{select_batch_adjmmse, BatchConfig, MhConfig};
use seqdesign::design::lhs_maximin;
use seqdesign::kernels::design_matrix;
use seqdesign::kriging::{FitOptions, KrigingModel};
use seqdesign::loocv::loocv_diagnostics;
use seqdesign::problems::problem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = problem("shubert")?;
    let pts = lhs_maximin(15, 2, 2000, 5)?.points;
    let y: Vec<f64> = pts.iter().map(|u| p.eval_unit(1, u)).collect::<Result<_, _>>()?;
    let model = KrigingModel::fit(&design_matrix(&pts)?, &y, &FitOptions::default())?;
    let diag = loocv_diagnostics(&model)?;
    let cfg = BatchConfig {
        mh: MhConfig { seed: 5, ..MhConfig::default() },
        ..BatchConfig::default()
    };
    let batch = select_batch_adjmmse(&model, &diag, 5, &cfg)?;
    println!("chain acceptance rate {:.3}", batch.acceptance_rate);
    for (x, s) in batch.points.iter().zip(&batch.scores) {
        println!("  {:?}  adjusted variance {s:.4}", p.domain.from_unit(x));
    }
    Ok(())
}
