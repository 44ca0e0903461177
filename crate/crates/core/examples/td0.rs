//! TD(0) with linear features: contraction factor, fixed point and a run.

use markov_sa::engine::simulate;
use markov_sa::rl::{td_as_sa_problem, TdInstance};
use markov_sa::{FiniteChain, Norm, StepSchedule};
use nalgebra::DMatrix;

fn main() -> markov_sa::Result<()> {
    let chain = FiniteChain::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]])?;
    let inst = TdInstance::new(chain.clone(), vec![1.0, 1.0], 0.5, DMatrix::from_row_slice(2, 1, &[0.5, 0.5]))?;
    println!("lambda_M = {}, alpha = {:.7}, r* = {:?}", inst.lambda_m, inst.alpha.value, inst.r_star);

    // Inadmissible features are rescaled; Phi r* is unchanged.
    let big = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
    let scaled = TdInstance::new_rescaled(chain, vec![1.0, 0.0], 0.2, big)?;
    println!("rescaled by {:.4}: r* = {:?}, unscaled {:?}", scaled.scale, scaled.r_star, scaled.r_star_unscaled());

    let problem = td_as_sa_problem(&scaled)?;
    let sch = StepSchedule::harmonic(1.0)?;
    let traj = simulate(&problem, &sch, &[0.0], 0, 100_000, 1)?;
    for n in [10, 1000, 100_000] {
        println!("n = {n:>6}: ||r_n - r*|| = {:.2e}", Norm::Euclidean.dist(traj.x(n), &scaled.r_star));
    }
    Ok(())
}
