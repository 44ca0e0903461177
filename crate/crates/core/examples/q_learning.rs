//! Softmax Q-learning on a two-state MDP: Q*, the sampled pi_min and a run.

use markov_sa::engine::simulate;
use markov_sa::rl::{q_as_sa_problem, BehaviorPolicy, Mdp, QLearningInstance};
use markov_sa::{Norm, StepSchedule};

const MDP: &str = "\
# s r gamma
2 2 0.5
# i u k(i,u) p(0|i,u) p(1|i,u)
0 0 1.0 0.7 0.3
0 1 0.5 0.2 0.8
1 0 0.0 0.6 0.4
1 1 2.0 0.1 0.9
";

fn main() -> markov_sa::Result<()> {
    let mdp = Mdp::from_text(MDP)?;
    let inst = QLearningInstance::new(mdp, BehaviorPolicy::Softmax { tau: 20.0 }, 2000, 9)?;
    println!("Q* = {:?}", inst.q_star);
    println!("pi_min = {:.4} ({:?}), alpha = {:.4}", inst.pi_min.value, inst.pi_min.provenance, inst.alpha.value);

    let problem = q_as_sa_problem(&inst)?;
    let sch = StepSchedule::harmonic(1.0)?;
    let traj = simulate(&problem, &sch, &[0.0; 4], 0, 100_000, 3)?;
    for n in [100, 1000, 10_000, 100_000] {
        println!("n = {n:>6}: ||Q_n - Q*|| = {:.4}", Norm::Sup.dist(traj.x(n), &inst.q_star));
    }
    Ok(())
}
