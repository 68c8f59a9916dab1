//! Fit a kriging model by maximum likelihood, predict, and inspect the
//! closed-form leave-one-out diagnostics.

use seqdesign::design::lhs_maximin;
use seqdesign::kernels::design_matrix;
use seqdesign::kriging::{FitOptions, KrigingModel};
use seqdesign::loocv::{loocv_diagnostics, loocv_mean, loocv_var};
use seqdesign::problems::problem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = problem("michalewicz")?;
    let pts = lhs_maximin(12, 2, 2000, 1)?.points;
    let y: Vec<f64> = pts.iter().map(|u| p.eval_unit(1, u)).collect::<Result<_, _>>()?;
    let model = KrigingModel::fit(&design_matrix(&pts)?, &y, &FitOptions::default())?;

    println!("theta = {:?}", model.kernel().theta());
    println!("beta = {:.4}, sigma2 = {:.4}", model.beta()[0], model.sigma2());
    let x = [0.4, 0.7];
    println!("at {x:?}: mean {:.4}, variance {:.4}", model.predict_mean(&x)?, model.predict_var(&x)?);

    let diag = loocv_diagnostics(&model)?;
    println!("\n  i   y_i       LOO mean  LOO var    ratio");
    for i in 0..model.n() {
        println!(
            "{i:>3} {:>9.4} {:>9.4} {:>9.2e} {:>8.3}",
            y[i],
            loocv_mean(&model, i)?,
            loocv_var(&model, i)?,
            diag.ratios[i]
        );
    }
    Ok(())
}
