//! Driving the experiment runner from an inline config, as `sa-lab verify` does.

use std::path::Path;

use markov_sa::lab::{cmd_verify, ExperimentConfig};

const CONFIG: &str = "\
[problem]
kind = synthetic
alpha = 0.5
x_star = 0, 1, 2

[schedule]
rule = harmonic
b = 2

[run]
T = 3000
n_trajectories = 50
seed = 11
deltas = 0.2

[bound]
D = 3
samples = 300
";

fn main() -> markov_sa::Result<()> {
    let mut cfg = ExperimentConfig::parse(CONFIG, Path::new("."))?;
    cfg.out = std::env::temp_dir().join("sa-lab-example");
    let report = cmd_verify(&cfg)?;
    for item in &report.items {
        println!("{:<28} {:?}", item.name, item.status);
    }
    println!("passed: {}; written to {}", report.passed, cfg.out.display());
    Ok(())
}
