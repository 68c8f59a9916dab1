use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seqdesign::error::Error;
use seqdesign::harness::{self, ExperimentConfig, Method};
use seqdesign::problems::{problem, PROBLEM_NAMES};

#[derive(Parser)]
#[command(name = "seqdesign", version, about = "Sequential kriging and co-kriging experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Batch size, or time budget per round for co-kriging batches.
        #[arg(long)]
        q: Option<u64>,
        #[arg(long = "n-mcmc")]
        n_mcmc: Option<usize>,
        #[arg(long = "burn-in")]
        burn_in: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "target-accept")]
        target_accept: Option<f64>,
        #[arg(long)]
        replicates: Option<usize>,
        /// 50 replicates and a 50000-sample chain.
        #[arg(long = "paper-scale")]
        paper_scale: bool,
    },
    /// List the benchmark problems.
    ListProblems,
    /// List the sequential criteria.
    ListCriteria,
    /// Rerun a recorded experiment and compare its CSV digests.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        _ => 3,
    }
}

fn run(config: &Path, output: Option<PathBuf>, overrides: impl FnOnce(&mut ExperimentConfig)) -> Result<(), (u8, String)> {
    let mut cfg = ExperimentConfig::load(config).map_err(|e| match e {
        Error::Io { .. } => (2, e.to_string()),
        e => (exit_code(&e), e.to_string()),
    })?;
    overrides(&mut cfg);
    if let Some(out) = output {
        cfg.output = Some(out);
    }
    let dir = cfg
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("results/{}-{}", cfg.problem, cfg.criterion)));
    cfg.validate().map_err(|e| (2, e.to_string()))?;
    let result = harness::run_experiment(&cfg).map_err(|e| (exit_code(&e), e.to_string()))?;
    harness::emit_summary(&result, &dir).map_err(|e| (3, e.to_string()))?;
    let completed = result.records.len() - result.failures();
    println!(
        "{} / {}: {completed} replicates completed, {} failed",
        cfg.problem,
        cfg.criterion,
        result.failures()
    );
    if let Some(last) = result.summary.last() {
        println!(
            "final: spent {} mean NRMSE {:.5} (q10 {:.5}, q90 {:.5}) accurate fraction {:.3}",
            last.spent_time, last.mean_nrmse, last.q10_nrmse, last.q90_nrmse, last.mean_accurate_run_fraction
        );
    }
    println!("wrote {}", dir.display());
    if completed == 0 {
        return Err((3, "every replicate failed".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run {
            config,
            output,
            q,
            n_mcmc,
            burn_in,
            seed,
            target_accept,
            replicates,
            paper_scale,
        } => run(&config, output, |cfg| {
            cfg.q = q.or(cfg.q);
            cfg.mh.n_samples = n_mcmc.or(cfg.mh.n_samples);
            cfg.mh.burn_in = burn_in.or(cfg.mh.burn_in);
            cfg.mh.target_acceptance = target_accept.or(cfg.mh.target_acceptance);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.replicates = replicates.or(cfg.replicates);
            cfg.paper_scale |= paper_scale;
        }),
        Command::ListProblems => {
            for name in PROBLEM_NAMES {
                let p = problem(name).expect("registered problem");
                let times: Vec<String> = p.cost.times().iter().map(|t| t.to_string()).collect();
                println!("{name:<12} d={} levels={} cost=[{}]  {}", p.dim(), p.n_levels(), times.join(","), p.description);
            }
            Ok(())
        }
        Command::ListCriteria => {
            for m in Method::ALL {
                let scope = match m {
                    Method::Kriging(_) => "single-level",
                    Method::Cokriging(_) => "multi-level",
                };
                println!("{:<14} {scope:<13} {}", m.name(), m.description());
            }
            Ok(())
        }
        Command::Replay { manifest, output } => match harness::replay(&manifest, output.as_deref()) {
            Ok(report) => {
                for (name, old, new) in &report.files {
                    let tag = if old == new { "match" } else { "MISMATCH" };
                    println!("{name}: {tag}");
                }
                println!("replayed into {}", report.output.display());
                if report.matches() {
                    Ok(())
                } else {
                    Err((3, "replayed outputs differ from the manifest".into()))
                }
            }
            Err(e) => Err((exit_code(&e), e.to_string())),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
