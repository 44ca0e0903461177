//! Every constant of the concentration bound, a calibrated D, the failure
//! curve and a domination check on fresh trajectories.

use markov_sa::bounds::{calibrate_d, envelope_domination, BoundInputs, BoundReport, Campaign};
use markov_sa::synthetic::SyntheticSpec;
use markov_sa::StepSchedule;

fn main() -> markov_sa::Result<()> {
    let problem = SyntheticSpec::default().build()?;
    let sch = StepSchedule::harmonic(2.0)?;
    let x0 = vec![2.0, 2.0];
    let mut inputs = BoundInputs::new(x0.clone());
    inputs.n_samples = 1000;
    let report = BoundReport::build(&problem, &sch, &inputs)?;
    println!(
        "N = {}, n0 = {}, K* = {:.3}, Vmax = {:.3}, c1 = {:.3}, C = {:.3e}",
        report.big_n, report.n0, report.k_star.value, report.v_max.value, report.c1.value, report.c.value
    );

    let campaign = Campaign { deltas: vec![0.05, 0.2], n_trajectories: 200, horizon: 1000, seed: 1, x0, y0: 0 };
    let cal = calibrate_d(&report, &problem, &campaign)?;
    println!("D = {:.4} ({:?}), exceedances {:?}", cal.d.value, cal.d.provenance, cal.exceedances);
    let report = report.with_d(cal.d);

    for p in report.curves(0.2, &[report.n0 + 10, 100, 1000, 10_000])? {
        println!("n = {:>6}: envelope {:.4}, failure bound {:.3e}", p.n, p.envelope, p.failure_bound);
    }
    let fresh = Campaign { seed: 2, n_trajectories: 500, ..campaign };
    let dom = envelope_domination(&report, &problem, &fresh)?;
    println!("domination on fresh runs: passed={} violations={:?}", dom.passed, dom.violations);
    Ok(())
}
