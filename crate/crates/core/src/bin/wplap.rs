use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wplap::cli::{self, Outcome, Stage, EXIT_CONFIG};
use wplap::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "wplap", version, about = "Weighted p-Laplacian solver and weight-condition toolkit")]
struct Args {
    #[command(subcommand)]
    verb: Verb,
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Verb {
    /// Weight constants for omega and v.
    CheckWeights,
    /// Local minimizer and mountain-pass solution.
    Solve,
    /// Empirical inequality checks.
    Verify,
    /// Merge the reports of a run directory.
    Report,
}

fn run(args: &Args) -> Result<Outcome, (Stage, wplap::Error)> {
    let stage = match args.verb {
        Verb::CheckWeights => Stage::Weights,
        Verb::Solve => Stage::Solve,
        Verb::Verify => Stage::Verify,
        Verb::Report => Stage::Report,
    };
    let fail = |e| (stage, e);
    let path = args.config.clone().ok_or_else(|| {
        fail(wplap::Error::Config { key: "--config".into(), line: 0, msg: "no config file given".into() })
    })?;
    let mut cfg = ExperimentConfig::load(&path).map_err(fail)?;
    if let Some(s) = args.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = &args.out {
        cfg.output = o.clone();
    }
    match args.verb {
        Verb::CheckWeights => cli::cmd_check_weights(&cfg),
        Verb::Solve => cli::cmd_solve(&cfg),
        Verb::Verify => cli::cmd_verify(&cfg),
        Verb::Report => cli::cmd_report(&cfg, &cfg.output),
    }
    .map_err(fail)
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(t) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    let code = match run(&args) {
        Ok(out) => {
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            if out.passed {
                println!("{}: pass", out.stage.name());
            } else {
                println!("{}: FAIL ({})", out.stage.name(), out.failures.join(", "));
            }
            out.code()
        }
        Err((stage, e)) => {
            eprintln!("error: {e}");
            cli::exit_code(stage, &e)
        }
    };
    ExitCode::from(code as u8)
}
