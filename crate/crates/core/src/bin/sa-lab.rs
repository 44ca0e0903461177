use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use markov_sa::lab::{cmd_bound, cmd_calibrate, cmd_simulate, cmd_verify, exit_code, ExperimentConfig};

/// Simulate, bound and verify contractive stochastic approximation with
/// Markov noise. Worker threads: SA_LAB_WORKERS (default: all cores).
#[derive(Parser)]
#[command(name = "sa-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `[run] out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte-Carlo campaign and write summary.csv.
    Simulate(Common),
    /// Compute every bound constant, curves and the optional stitch.
    Bound(Common),
    /// Calibrate D from the noise diagnostic and write d.txt.
    CalibrateD(Common),
    /// Run all invariant checks and write verify.json.
    Verify(Common),
}

fn load(c: &Common) -> Result<ExperimentConfig, markov_sa::Error> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Simulate(c) => {
            let r = load(c).and_then(|cfg| cmd_simulate(&cfg));
            if let Ok(s) = &r {
                println!(
                    "{} of {} trajectories left the envelope (delta = {}); frequency {:.4}{}",
                    s.violations,
                    s.n_trajectories,
                    s.delta,
                    s.violation_frequency,
                    s.failure_bound.map(|b| format!(", failure bound {b:.4}")).unwrap_or_default()
                );
            }
            report_err(&r);
            exit_code(&r, |_| false)
        }
        Command::Bound(c) => {
            let r = load(c).and_then(|cfg| cmd_bound(&cfg));
            if let Ok(b) = &r {
                println!("n0 = {}, C = {:e}, c1 = {}", b.report.n0, b.report.c.value, b.report.c1.value);
                for d in &b.deltas {
                    println!("delta = {}: {:?} branch, failure bound at T = {:.4e}", d.delta, d.branch, d.failure_bound_at_t);
                }
                if let Some(s) = &b.stitch {
                    println!("stitch: n0 = {}, n1 = {}", s.n0, s.n1);
                }
            }
            report_err(&r);
            exit_code(&r, |_| false)
        }
        Command::CalibrateD(c) => {
            let r = load(c).and_then(|cfg| cmd_calibrate(&cfg));
            if let Ok((cal, _)) = &r {
                println!("D = {}{}", cal.d.value, if cal.at_ceiling { " (search ceiling)" } else { "" });
            }
            report_err(&r);
            exit_code(&r, |_| false)
        }
        Command::Verify(c) => {
            let r = load(c).and_then(|cfg| cmd_verify(&cfg));
            if let Ok(v) = &r {
                for i in &v.items {
                    println!("{:<28} {:?}  measured {:.4e}  threshold {:.4e}", i.name, i.status, i.measured, i.threshold);
                }
            }
            report_err(&r);
            exit_code(&r, |v| !v.passed)
        }
    };
    ExitCode::from(code as u8)
}

fn report_err<T>(r: &Result<T, markov_sa::Error>) {
    if let Err(e) = r {
        eprintln!("error: {e}");
    }
}
