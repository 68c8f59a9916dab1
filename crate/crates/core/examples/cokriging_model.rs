//! Two-level co-kriging on the tank problem: parameters, per-level variance
//! contributions and multi-level leave-one-out diagnostics.

use seqdesign::cokriging::{CokrigingModel, CokrigingOptions, MultiFidelityData};
use seqdesign::harness::initial_designs;
use seqdesign::kernels::design_matrix;
use seqdesign::mle::MleConfig;
use seqdesign::problems::{normalized_rmse, problem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = problem("tank-r1")?;
    let sets = initial_designs(&[20, 10], p.dim(), 4)?;
    let mut outputs = Vec::new();
    for (l, s) in sets.iter().enumerate() {
        outputs.push(s.iter().map(|u| p.eval_unit(l + 1, u)).collect::<Result<Vec<_>, _>>()?);
    }
    let designs = sets.iter().map(|s| design_matrix(s)).collect::<Result<Vec<_>, _>>()?;
    let opts = CokrigingOptions {
        mle: MleConfig { starts: 4, ..MleConfig::default() },
        ..CokrigingOptions::default()
    };
    let model = CokrigingModel::fit(MultiFidelityData::new(designs, outputs)?, &opts)?;
    println!("rho_1 = {:.4}", model.rho(2));
    for l in 1..=2 {
        println!("level {l}: sigma2 {:.4e}, theta {:?}", model.sigma2(l), model.kernel(l).theta());
    }

    let x = vec![0.5; p.dim()];
    let parts = model.variance_decomposition(&x, 2)?;
    println!("variance at the centre: {:.4e} = {:?}", parts.total, parts.weighted);

    let diag = model.loocv_diagnostics()?;
    for l in 1..=2 {
        println!("level {l}: LOO ratio sum {:.3}", diag.level(l).ratio_sum());
    }

    let test = p.test_set()?;
    let pred: Vec<f64> = test.unit.iter().map(|u| model.predict_mean(u, 2)).collect::<Result<_, _>>()?;
    println!("test NRMSE {:.4}", normalized_rmse(&pred, &test.truth)?);
    Ok(())
}
