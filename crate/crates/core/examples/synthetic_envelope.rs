//! The synthetic family: sampled assumption checks, one trajectory and the
//! pathwise bound `||x_n|| <= ||x_N|| + K/(1-alpha)`.

use markov_sa::engine::{check_problem, pathwise_envelope_check, simulate};
use markov_sa::synthetic::SyntheticSpec;
use markov_sa::StepSchedule;

fn main() -> markov_sa::Result<()> {
    let spec = SyntheticSpec { alpha: 0.7, sigma: 1.0, ..SyntheticSpec::default() };
    let problem = spec.build()?;
    let checks = check_problem(&problem, 2000, 5.0, 1)?;
    for c in &checks.items {
        println!("{:<14} passed={} measured={:.4} threshold={:.4}", c.name, c.passed, c.measured, c.threshold);
    }

    let sch = StepSchedule::harmonic(1.0)?;
    let traj = simulate(&problem, &sch, &[5.0, -5.0], 0, 5000, 42)?;
    for n in [0, 10, 100, 1000, 5000] {
        println!("x_{n} = {:?}", traj.x(n));
    }
    let env = pathwise_envelope_check(&problem, &traj, sch.certify_n()?);
    println!("envelope: {} points, {} violations, worst margin {:.3}", env.checked, env.violations, env.worst_margin);
    Ok(())
}
