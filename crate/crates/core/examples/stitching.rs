//! Stitching an external moment bound `upsilon(n) = c / n^Gamma` with the
//! tail bound to get `(n0, n1)`.

use markov_sa::bounds::{chebyshev_n0_power, stitch, BoundInputs, BoundReport, StitchRequest};
use markov_sa::synthetic::SyntheticSpec;
use markov_sa::{StepSchedule, Tagged};

fn main() -> markov_sa::Result<()> {
    let problem = SyntheticSpec::default().build()?;
    let mut inputs = BoundInputs::new(vec![0.0, 0.0]);
    inputs.n_samples = 500;
    inputs.d = Some(Tagged::declared(5.0));
    let report = BoundReport::build(&problem, &StepSchedule::harmonic(2.0)?, &inputs)?;

    let (c, gamma) = (2.0, 0.75);
    let delta = 0.01;
    let req = StitchRequest {
        k_breve: 1.0,
        nu: 0.05,
        eps: 3.0 * delta / (1.0 - report.alpha.value),
        delta,
        max_n0: 1 << 40,
    };
    let st = stitch(&report, &|n| c / (n as f64).powf(gamma), &req)?;
    println!("closed-form lower bound on n0: {:.1}", chebyshev_n0_power(c, gamma, req.nu, req.k_breve));
    println!("{st:#?}");

    // eps at or below delta/(1-alpha) cannot be reached.
    let bad = StitchRequest { eps: delta, ..req };
    println!("eps = delta: {}", stitch(&report, &|n| c / (n as f64).powf(gamma), &bad).unwrap_err());
    Ok(())
}
