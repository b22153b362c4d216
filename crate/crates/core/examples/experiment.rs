//! A config-driven run: weight check, solve, verify and the merged report.

use std::path::Path;

use wplap::cli::{cmd_check_weights, cmd_report, cmd_solve, cmd_verify};
use wplap::config::ExperimentConfig;

const CONFIG: &str = "
seed = 3

[problem]
p = 1.5
q = 3
gamma = 1.3
mu = 0.05
n = 1
m = 1

[domain]
lo = 0 0
hi = 1 1
counts = 13

[verify]
poincare_samples = 30
scan_lo = 1e-8
scan_hi = 1e8
";

fn main() -> wplap::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut cfg = ExperimentConfig::from_str_at(CONFIG, Path::new("."))?;
    cfg.output = dir.path().to_path_buf();

    for out in [cmd_check_weights(&cfg)?, cmd_solve(&cfg)?, cmd_verify(&cfg)?, cmd_report(&cfg, dir.path())?] {
        println!("{:<14} exit {}  {:?}", out.stage.name(), out.code(), out.failures);
    }
    let mut names: Vec<String> = std::fs::read_dir(dir.path())?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    names.sort();
    println!("outputs: {}", names.join(" "));
    println!("\nconfig keys and defaults:\n{}", wplap::config::reference());
    Ok(())
}
