//! A replicated experiment from a JSON config, written as CSV summaries and
//! a manifest, then replayed.

use seqdesign::harness::{emit_summary, replay, run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::from_json(
        r#"{"problem": "ackley", "criterion": "adjmmse", "replicates": 4,
            "initial": [10], "budget": 10, "seed": 42}"#,
    )?;
    let result = run_experiment(&cfg)?;
    let dir = std::env::temp_dir().join("seqdesign-example");
    emit_summary(&result, &dir)?;
    for row in &result.summary {
        println!(
            "iteration {:>2}: mean NRMSE {:.4} [{:.4}, {:.4}]",
            row.iteration, row.mean_nrmse, row.q10_nrmse, row.q90_nrmse
        );
    }
    let check = replay(&dir.join("manifest.json"), Some(&dir.join("replay")))?;
    println!("outputs in {}; replay matches: {}", dir.display(), check.matches());
    Ok(())
}
